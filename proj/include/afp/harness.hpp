// Experimental apparatus: triplet construction, offline pre-training,
// offline evaluation and the scored online stream.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "afp/ensemble.hpp"
#include "afp/io.hpp"
#include "afp/scenes.hpp"

namespace afp {

template <typename T>
struct Triplet {
  Frame<T> x_prev;  // x_{t-k}
  Frame<T> x_t;
  Frame<T> x_next;  // x_{t+k}, ground truth
};

// One triplet per t with k <= t < len - k; too-short input yields none.
template <typename T>
std::vector<Triplet<T>> make_triplets(const std::vector<Frame<T>>& frames, std::size_t k) {
  if (k < 1) throw std::invalid_argument("make_triplets: k must be >= 1");
  std::vector<Triplet<T>> out;
  if (frames.size() < 2 * k + 1) return out;
  for (std::size_t t = k; t + k < frames.size(); ++t) out.push_back({frames[t - k], frames[t], frames[t + k]});
  return out;
}

inline std::vector<Triplet<float>> triplets_from_script(const StreamScript& script, std::size_t k) {
  std::vector<Triplet<float>> out;
  for (const auto& spec : expand_script(script)) {
    auto t = make_triplets(gen_scene(spec), k);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

struct PretrainConfig {
  std::size_t epochs = 100;
  PretrainWeights lambdas;
  MuWeights mu = MuWeights::offline();
  AdamConfig adam;
  std::uint64_t seed = 0;            // shuffling order
  std::uint64_t extractor_seed = 7;  // perceptual feature stack
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

// Trains params in place; returns the mean L_Pre of every epoch.
template <typename T>
std::vector<double> pretrain(const std::vector<Triplet<T>>& triplets, PredictionParams<T>& params,
                             const PretrainConfig& cfg) {
  if (triplets.empty()) throw std::invalid_argument("pretrain: no triplets");
  cfg.lambdas.validate();
  cfg.mu.validate();
  const auto extractor = FeatureExtractor<T>::random_stack(cfg.extractor_seed);
  auto all = params.all();
  AdamState<T> adam(all, cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t idx : order) {
      const auto& tr = triplets[idx];
      all.zero_grad();
      const auto bundle = predict(tr.x_t, tr.x_prev, params);
      const auto loss = loss_pretrain(bundle, tr.x_next, cfg.lambdas, cfg.mu, &extractor);
      const double v = static_cast<double>(loss.item());
      if (!std::isfinite(v))
        throw DivergenceError("pre-training diverged at epoch " + std::to_string(epoch + 1) + " (loss " +
                              std::to_string(v) + ")");
      backward(loss);
      adam_step(all, adam);
      total += v;
    }
    all.zero_grad();
    curve.push_back(total / static_cast<double>(triplets.size()));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, curve.back());
  }
  return curve;
}

struct FrameScore {
  double ssim = 0;
  double psnr = 0;
};

// Both frames are clamped to [0,1] and reduced to their center region.
template <typename T>
FrameScore score_frame(const Frame<T>& prediction, const Frame<T>& truth, double crop_fraction) {
  const auto a = center_region(clamp01(prediction), crop_fraction);
  const auto b = center_region(truth.detach(), crop_fraction);
  return {ssim(a, b), psnr(a, b)};
}

struct OfflineScores {
  FrameScore model;
  FrameScore repeat;
  std::size_t count = 0;
};

template <typename T>
OfflineScores evaluate_offline(const std::vector<Triplet<T>>& triplets, const PredictionParams<T>& params,
                               double crop_fraction) {
  OfflineScores s;
  NoGradGuard ng;
  for (const auto& tr : triplets) {
    const auto m = score_frame(predict(tr.x_t, tr.x_prev, params).x_r2, tr.x_next, crop_fraction);
    const auto r = score_frame(tr.x_t, tr.x_next, crop_fraction);
    s.model.ssim += m.ssim;
    s.model.psnr += m.psnr;
    s.repeat.ssim += r.ssim;
    s.repeat.psnr += r.psnr;
  }
  s.count = triplets.size();
  if (s.count) {
    const double n = static_cast<double>(s.count);
    s.model = {s.model.ssim / n, s.model.psnr / n};
    s.repeat = {s.repeat.ssim / n, s.repeat.psnr / n};
  }
  return s;
}

struct OnlineEvalConfig {
  double crop_fraction = 0.9;
  // Dump the ensemble prediction every N scored frames (0 = never).
  std::size_t dump_every = 0;
  std::filesystem::path dump_dir;
  std::function<void(const MetricRecord&)> on_record;
};

// Drives the ensemble over the segments in order. Each segment is one scene:
// the history is flushed at its start. Frame indices run across segments.
template <typename T>
std::vector<MetricRecord> run_online_eval(const std::vector<std::vector<Frame<T>>>& segments, EnsembleState<T>& state,
                                          const OnlineEvalConfig& cfg) {
  std::vector<MetricRecord> records;
  std::uint64_t frame_index = 0;
  for (std::size_t scene = 0; scene < segments.size(); ++scene) {
    state.flush();
    for (const auto& frame : segments[scene]) {
      auto outcome = step_stream(state, frame);
      if (outcome) {
        const auto& p = outcome->scored;
        MetricRecord r;
        r.frame_index = frame_index;
        r.scene_id = scene;
        const auto e = score_frame(p.pred.x_hat, frame, cfg.crop_fraction);
        const auto pp = score_frame(p.pred.x_p, frame, cfg.crop_fraction);
        const auto c = score_frame(p.pred.x_c, frame, cfg.crop_fraction);
        const auto rep = score_frame(p.repeat, frame, cfg.crop_fraction);
        r.ssim_ensemble = e.ssim;
        r.ssim_pretrained = pp.ssim;
        r.ssim_continuous = c.ssim;
        r.ssim_repeat = rep.ssim;
        r.psnr_ensemble = e.psnr;
        r.psnr_pretrained = pp.psnr;
        r.psnr_continuous = c.psnr;
        r.psnr_repeat = rep.psnr;
        r.updated = outcome->updated;
        r.loss = outcome->loss;
        if (cfg.dump_every && records.size() % cfg.dump_every == 0 && !cfg.dump_dir.empty()) {
          std::filesystem::create_directories(cfg.dump_dir);
          char name[64];
          std::snprintf(name, sizeof name, "pred_%06llu.ppm", static_cast<unsigned long long>(frame_index));
          write_ppm(cfg.dump_dir / name, p.pred.x_hat);
        }
        records.push_back(r);
        if (cfg.on_record) cfg.on_record(r);
      }
      ++frame_index;
    }
  }
  state.flush();
  return records;
}

template <typename T>
std::vector<MetricRecord> run_online_eval(const StreamScript& script, EnsembleState<T>& state,
                                          const OnlineEvalConfig& cfg) {
  std::vector<std::vector<Frame<T>>> segments;
  for (const auto& spec : expand_script(script)) {
    auto frames = gen_scene(spec);
    if constexpr (std::is_same_v<T, float>) {
      segments.push_back(std::move(frames));
    } else {
      std::vector<Frame<T>> conv;
      for (const auto& f : frames) conv.push_back(cast<T>(f));
      segments.push_back(std::move(conv));
    }
  }
  return run_online_eval(segments, state, cfg);
}

// Trailing mean over min(window, available) samples.
inline std::vector<double> moving_average(const std::vector<double>& series, std::size_t window) {
  if (window < 1) throw std::invalid_argument("moving_average: window must be >= 1");
  std::vector<double> out(series.size());
  double acc = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    acc += series[i];
    if (i >= window) acc -= series[i - window];
    out[i] = acc / static_cast<double>(std::min(window, i + 1));
  }
  return out;
}

struct MethodMeans {
  double ssim_ensemble = 0, ssim_pretrained = 0, ssim_continuous = 0, ssim_repeat = 0;
  double psnr_ensemble = 0, psnr_pretrained = 0, psnr_continuous = 0, psnr_repeat = 0;
  std::size_t count = 0;
};

// Means over records whose scene_id satisfies the predicate.
template <typename Pred>
MethodMeans mean_metrics(const std::vector<MetricRecord>& records, Pred&& keep) {
  MethodMeans m;
  for (const auto& r : records) {
    if (!keep(r)) continue;
    m.ssim_ensemble += r.ssim_ensemble;
    m.ssim_pretrained += r.ssim_pretrained;
    m.ssim_continuous += r.ssim_continuous;
    m.ssim_repeat += r.ssim_repeat;
    m.psnr_ensemble += r.psnr_ensemble;
    m.psnr_pretrained += r.psnr_pretrained;
    m.psnr_continuous += r.psnr_continuous;
    m.psnr_repeat += r.psnr_repeat;
    ++m.count;
  }
  if (m.count) {
    const double n = static_cast<double>(m.count);
    for (double* v : {&m.ssim_ensemble, &m.ssim_pretrained, &m.ssim_continuous, &m.ssim_repeat, &m.psnr_ensemble,
                      &m.psnr_pretrained, &m.psnr_continuous, &m.psnr_repeat})
      *v /= n;
  }
  return m;
}

// Trend table: metric columns smoothed with a trailing window.
inline std::string trend_csv(const std::vector<MetricRecord>& records, std::size_t window) {
  auto column = [&](double MetricRecord::*field) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto& r : records) v.push_back(r.*field);
    return moving_average(v, window);
  };
  double MetricRecord::*fields[] = {&MetricRecord::ssim_ensemble,   &MetricRecord::ssim_pretrained,
                                    &MetricRecord::ssim_continuous, &MetricRecord::ssim_repeat,
                                    &MetricRecord::psnr_ensemble,   &MetricRecord::psnr_pretrained,
                                    &MetricRecord::psnr_continuous, &MetricRecord::psnr_repeat};
  std::vector<std::vector<double>> cols;
  for (auto f : fields) cols.push_back(column(f));
  std::string out =
      "frame_index,scene_id,ssim_ensemble,ssim_pretrained,ssim_continuous,ssim_repeat,"
      "psnr_ensemble,psnr_pretrained,psnr_continuous,psnr_repeat\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out += std::to_string(records[i].frame_index) + "," + std::to_string(records[i].scene_id);
    for (const auto& c : cols) out += "," + format_fixed(c[i]);
    out += "\n";
  }
  return out;
}

}  // namespace afp
