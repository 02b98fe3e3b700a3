// The afp command line: pretrain / eval / stream subcommands.

#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "afp/config.hpp"

namespace afp {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitDivergence = 3, kExitIo = 4 };

namespace detail {

inline void write_resolved(const RunConfig& c, const std::filesystem::path& out) {
  write_file(out / "resolved_config.json", resolved_json(c).dump(2) + "\n");
}

// Pre-trained weights plus a sidecar naming their architecture.
inline void save_pretrained(const PredictionParams<float>& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_params(p.all(), dir / "theta_p.dcp");
  nlohmann::json j = {{"architecture", architecture_json(p.arch)},
                      {"params", "theta_p.dcp"},
                      {"sha256", params_checksum(p.all())}};
  write_file(dir / "checkpoint.json", j.dump(2) + "\n");
}

inline PredictionParams<float> load_pretrained(const std::filesystem::path& dir, const Architecture& arch) {
  const auto meta_path = dir / "checkpoint.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": " + e.what());
  }
  if (!meta.contains("architecture") || meta["architecture"] != architecture_json(arch))
    throw ConfigError("checkpoint architecture in '" + meta_path.string() +
                      "' does not match the configured architecture");
  try {
    return PredictionParams<float>::from_flat(arch, load_params<float>(dir / "theta_p.dcp"));
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("checkpoint does not match the configured architecture: ") + e.what());
  }
}

inline std::vector<std::vector<Frame<float>>> stream_segments(const RunConfig& c) {
  if (c.input_dir) return {read_sequence(*c.input_dir)};
  std::vector<std::vector<Frame<float>>> segments;
  for (const auto& spec : expand_script(c.stream)) segments.push_back(gen_scene(spec));
  return segments;
}

inline void require_frame_size(const std::vector<Frame<float>>& frames, const Architecture& arch) {
  if (frames.empty()) return;
  const std::size_t m = arch.required_multiple();
  if (frames.front().dim(1) % m || frames.front().dim(2) % m)
    throw ConfigError("input frames are " + std::to_string(frames.front().dim(2)) + "x" +
                      std::to_string(frames.front().dim(1)) + "; both sides must be multiples of " +
                      std::to_string(m));
}

}  // namespace detail

inline int cmd_pretrain(RunConfig c, std::ostream& log) {
  const std::filesystem::path out = c.output_dir;
  std::filesystem::create_directories(out);
  detail::write_resolved(c, out);
  auto params = PredictionParams<float>::init(c.architecture, c.seed);
  const auto triplets = triplets_from_script(c.train, c.k);
  auto pc = c.pretrain_config();
  pc.on_epoch = [&](std::size_t epoch, double loss) { log << "epoch " << epoch << " loss " << format_fixed(loss) << "\n"; };
  const auto curve = pretrain(triplets, params, pc);
  std::string csv = "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) csv += std::to_string(i + 1) + "," + format_fixed(curve[i]) + "\n";
  write_file(out / "loss_curve.csv", csv);
  detail::save_pretrained(params, out);
  log << "theta_p sha256 " << params_checksum(params.all()) << "\n";
  return kExitOk;
}

inline int cmd_eval(RunConfig c, const std::filesystem::path& checkpoint, std::ostream& log) {
  const std::filesystem::path out = c.output_dir;
  const auto params = detail::load_pretrained(checkpoint, c.architecture);
  std::vector<Triplet<float>> triplets;
  if (c.input_dir) {
    const auto frames = read_sequence(*c.input_dir);
    detail::require_frame_size(frames, c.architecture);
    triplets = make_triplets(frames, c.k);
  } else {
    triplets = triplets_from_script(c.test, c.k);
  }
  if (triplets.empty()) throw ConfigError("evaluation data yields no triplets");
  std::filesystem::create_directories(out);
  detail::write_resolved(c, out);
  const auto s = evaluate_offline(triplets, params, c.crop_fraction);
  std::string csv = "method,ssim,psnr\n";
  csv += "model," + format_fixed(s.model.ssim) + "," + format_fixed(s.model.psnr) + "\n";
  csv += "repeat," + format_fixed(s.repeat.ssim) + "," + format_fixed(s.repeat.psnr) + "\n";
  write_file(out / "summary.csv", csv);
  log << "triplets " << s.count << "\n"
      << "model  ssim " << format_fixed(s.model.ssim) << " psnr " << format_fixed(s.model.psnr) << "\n"
      << "repeat ssim " << format_fixed(s.repeat.ssim) << " psnr " << format_fixed(s.repeat.psnr) << "\n";
  return kExitOk;
}

inline int cmd_stream(RunConfig c, const std::filesystem::path& checkpoint, std::ostream& log) {
  const std::filesystem::path out = c.output_dir;
  const auto theta_p = detail::load_pretrained(checkpoint, c.architecture);
  const auto segments = detail::stream_segments(c);
  for (const auto& s : segments) detail::require_frame_size(s, c.architecture);
  std::filesystem::create_directories(out);
  detail::write_resolved(c, out);
  auto state = init_ensemble(theta_p, WeightNetParams<float>::init(c.architecture, c.seed), c.ensemble());
  const auto before = params_checksum(state.theta_p.all());
  OnlineEvalConfig ec;
  ec.crop_fraction = c.crop_fraction;
  ec.dump_every = c.dump_every;
  ec.dump_dir = out / "frames";
  const auto records = run_online_eval(segments, state, ec);
  if (params_checksum(state.theta_p.all()) != before) throw std::logic_error("pre-trained parameters changed");
  write_csv(records, out / "metrics.csv");
  write_file(out / "trend.csv", trend_csv(records, c.trend_window));
  save_ensemble(state, out / "ensemble");
  const auto m = mean_metrics(records, [](const MetricRecord&) { return true; });
  log << "records " << m.count << "\n"
      << "mean ssim ensemble " << format_fixed(m.ssim_ensemble) << " continuous " << format_fixed(m.ssim_continuous)
      << " pretrained " << format_fixed(m.ssim_pretrained) << " repeat " << format_fixed(m.ssim_repeat) << "\n";
  return kExitOk;
}

// Parses argv and runs one subcommand; errors are reported on err and mapped
// to exit codes.
inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Adaptive future frame prediction: pre-training, offline evaluation and online streaming"};
  app.require_subcommand(1);
  std::string config_path, checkpoint_dir, out_dir;
  auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    auto* ck = sub->add_option("--checkpoint-dir", checkpoint_dir, "directory holding theta_p.dcp");
    if (needs_checkpoint) ck->required();
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
  };
  auto* pre = app.add_subcommand("pretrain", "train the prediction network offline");
  auto* ev = app.add_subcommand("eval", "score a pre-trained network and the Repeat baseline");
  auto* st = app.add_subcommand("stream", "run the ensemble over a stream with online updates");
  add_common(pre, false);
  add_common(ev, true);
  add_common(st, true);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    log << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitConfig;
  }
  const RunMode wanted = pre->parsed() ? RunMode::pretrain : ev->parsed() ? RunMode::eval : RunMode::stream;
  try {
    RunConfig c;
    try {
      c = parse_config_text(read_file(config_path));
    } catch (const IoError& e) {
      throw IoError(std::string("cannot read config: ") + e.what());
    }
    if (c.mode != wanted)
      throw ConfigError("'mode' is '" + to_string(c.mode) + "' but the subcommand is '" + to_string(wanted) + "'");
    if (!out_dir.empty()) c.output_dir = out_dir;
    switch (wanted) {
      case RunMode::pretrain: return cmd_pretrain(c, log);
      case RunMode::eval: return cmd_eval(c, checkpoint_dir, log);
      case RunMode::stream: return cmd_stream(c, checkpoint_dir, log);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace afp
