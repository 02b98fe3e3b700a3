// Online adaptive ensemble: a frozen pre-trained predictor, a continuously
// updated copy of it, and a gate that blends the two per pixel.
//
// Stream protocol (one call to step_stream per arriving frame x_n):
//   1. the pending prediction for x_n, fixed when x_{n-k} arrived, is
//      handed back for scoring;
//   2. if scheduled, one joint Adam step on (theta_c, theta_w) with
//      (x_{n-2k}, x_{n-k}) as inputs and x_n as ground truth;
//   3. x_n joins the history and the prediction for x_{n+k} is fixed.

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "afp/losses.hpp"
#include "afp/param_io.hpp"

namespace afp {

// Non-finite training loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EnsembleConfig {
  std::size_t k = 1;
  // nullopt: never adapt.
  std::optional<std::size_t> update_interval = 1;
  double lambda_c = 0.1;
  MuWeights mu_online = MuWeights::online();
  AdamConfig adam;

  void validate() const {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (update_interval && *update_interval < 1) throw std::invalid_argument("update_interval must be >= 1");
    if (!(lambda_c >= 0)) throw std::invalid_argument("lambda_c must be >= 0");
    mu_online.validate();
  }
};

template <typename T>
struct EnsemblePrediction {
  Frame<T> x_hat;
  Frame<T> x_p;
  Frame<T> x_c;
  WeightMap<T> w;
};

// A prediction fixed before its target frame arrived.
template <typename T>
struct PendingPrediction {
  EnsemblePrediction<T> pred;
  Frame<T> repeat;  // the newest input frame, the Repeat baseline
  std::uint64_t target_clock = 0;
  std::vector<std::uint64_t> source_clocks;
};

template <typename T>
struct StreamOutcome {
  PendingPrediction<T> scored;
  bool updated = false;
  std::optional<double> loss;
};

template <typename T>
struct EnsembleState {
  EnsembleConfig cfg;
  PredictionParams<T> theta_p;
  PredictionParams<T> theta_c;
  WeightNetParams<T> theta_w;
  AdamState<T> adam_c;
  AdamState<T> adam_w;
  std::uint64_t frame_clock = 0;

  struct Stamped {
    Frame<T> frame;
    std::uint64_t clock;
  };
  std::deque<Stamped> history;  // last 2k frames, oldest first
  std::deque<PendingPrediction<T>> pending;  // at most k, by target clock

  // Drops history and any pending prediction (scene boundary).
  void flush() {
    history.clear();
    pending.clear();
  }
};

template <typename T>
EnsembleState<T> init_ensemble(const PredictionParams<T>& pretrained, const WeightNetParams<T>& weight_init,
                               const EnsembleConfig& cfg) {
  cfg.validate();
  const auto ref = PredictionParams<T>::init(pretrained.arch, 0).all();
  if (!ref.same_layout(pretrained.all()))
    throw ShapeError("init_ensemble: pre-trained parameters do not match their architecture");
  if (!WeightNetParams<T>::init(weight_init.arch, 0).layers.same_layout(weight_init.layers))
    throw ShapeError("init_ensemble: weight-network parameters do not match their architecture");
  EnsembleState<T> s;
  s.cfg = cfg;
  s.theta_p = pretrained.clone();
  s.theta_c = pretrained.clone();
  s.theta_w = weight_init.clone();
  s.adam_c = AdamState<T>(s.theta_c.all(), cfg.adam);
  s.adam_w = AdamState<T>(s.theta_w.layers, cfg.adam);
  return s;
}

// w (x) x_p + (1 - w) (x) x_c
template <typename T>
Frame<T> blend(const Frame<T>& x_p, const Frame<T>& x_c, const WeightMap<T>& w) {
  return convex_blend(x_p, x_c, w, "blend");
}

// Ensemble prediction of x_{t+k} from (x_t, x_prev); no parameter mutation.
template <typename T>
EnsemblePrediction<T> predict_ensemble(const EnsembleState<T>& s, const Frame<T>& x_t, const Frame<T>& x_prev) {
  NoGradGuard ng;
  EnsemblePrediction<T> out;
  out.x_p = predict(x_t, x_prev, s.theta_p).x_r2;
  out.x_c = predict(x_t, x_prev, s.theta_c).x_r2;
  out.w = weight_net_forward(x_t, x_prev, s.theta_w);
  out.x_hat = blend(out.x_p, out.x_c, out.w);
  return out;
}

// The adaptive loss for the triplet, built on the live theta_c/theta_w graph.
template <typename T>
Tensor<T> adaptive_loss_graph(const EnsembleState<T>& s, const Frame<T>& x_prev2, const Frame<T>& x_prev,
                              const Frame<T>& x_now) {
  Frame<T> x_p;
  {
    NoGradGuard ng;
    x_p = predict(x_prev, x_prev2, s.theta_p).x_r2;
  }
  const auto x_c = predict(x_prev, x_prev2, s.theta_c).x_r2;
  const auto w = weight_net_forward(x_prev, x_prev2, s.theta_w);
  const auto x_hat = blend(x_p, x_c, w);
  return loss_adaptive(x_hat, x_c, x_now, s.cfg.lambda_c, s.cfg.mu_online);
}

// One joint Adam step on theta_c and theta_w. theta_p is never touched.
template <typename T>
double online_update(EnsembleState<T>& s, const Frame<T>& x_prev2, const Frame<T>& x_prev, const Frame<T>& x_now) {
  auto c_params = s.theta_c.all();
  c_params.zero_grad();
  s.theta_w.layers.zero_grad();
  const auto loss = adaptive_loss_graph(s, x_prev2, x_prev, x_now);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw DivergenceError("online update produced a non-finite loss");
  backward(loss);
  adam_step(c_params, s.adam_c);
  adam_step(s.theta_w.layers, s.adam_w);
  c_params.zero_grad();
  s.theta_w.layers.zero_grad();
  return value;
}

template <typename T>
bool update_scheduled(const EnsembleState<T>& s) {
  return s.cfg.update_interval && s.frame_clock % *s.cfg.update_interval == 0;
}

template <typename T>
std::optional<StreamOutcome<T>> step_stream(EnsembleState<T>& s, const Frame<T>& x_now) {
  s.frame_clock += 1;
  const std::size_t k = s.cfg.k;
  std::optional<StreamOutcome<T>> out;
  if (!s.pending.empty() && s.pending.front().target_clock == s.frame_clock) {
    out.emplace();
    out->scored = std::move(s.pending.front());
    s.pending.pop_front();
  }
  if (s.history.size() >= 2 * k && update_scheduled(s)) {
    const auto& x_prev = s.history[s.history.size() - k].frame;
    const auto& x_prev2 = s.history[s.history.size() - 2 * k].frame;
    const double loss = online_update(s, x_prev2, x_prev, x_now);
    if (out) {
      out->updated = true;
      out->loss = loss;
    }
  }
  s.history.push_back({x_now, s.frame_clock});
  while (s.history.size() > 2 * k) s.history.pop_front();
  if (s.history.size() >= k + 1) {
    const auto& cur = s.history.back();
    const auto& prev = s.history[s.history.size() - 1 - k];
    PendingPrediction<T> p;
    p.pred = predict_ensemble(s, cur.frame, prev.frame);
    p.repeat = cur.frame;
    p.target_clock = cur.clock + k;
    p.source_clocks = {prev.clock, cur.clock};
    s.pending.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: theta_{p,c,w}.dcp, adam_{c,w}.dcp and an ensemble.json sidecar.

namespace detail {

template <typename T>
ParamSet<T> moments_as_params(const ParamSet<T>& layout, const AdamState<T>& st) {
  ParamSet<T> out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    out.add("m." + layout[i].first, Tensor<T>::from(layout[i].second.shape(), st.first_moment[i]));
    out.add("v." + layout[i].first, Tensor<T>::from(layout[i].second.shape(), st.second_moment[i]));
  }
  return out;
}

template <typename T>
AdamState<T> moments_from_params(const ParamSet<T>& layout, const ParamSet<T>& saved, const AdamConfig& cfg,
                                 std::uint64_t step) {
  AdamState<T> st(layout, cfg);
  st.step_count = step;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& m = saved.get("m." + layout[i].first);
    const auto& v = saved.get("v." + layout[i].first);
    if (m.numel() != layout[i].second.numel() || v.numel() != layout[i].second.numel())
      throw ShapeError("adam moments do not match block '" + layout[i].first + "'");
    st.first_moment[i] = m.vec();
    st.second_moment[i] = v.vec();
  }
  return st;
}

}  // namespace detail

inline nlohmann::json architecture_json(const Architecture& a) {
  return {{"edvf_depth", a.edvf_depth},     {"edvf_base", a.edvf_base},     {"refine_depth", a.refine_depth},
          {"refine_base", a.refine_base},   {"weight_depth", a.weight_depth}, {"weight_base", a.weight_base},
          {"max_disp", a.max_disp}};
}

template <typename T>
void save_ensemble(const EnsembleState<T>& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_params(s.theta_p.all(), dir / "theta_p.dcp");
  save_params(s.theta_c.all(), dir / "theta_c.dcp");
  save_params(s.theta_w.layers, dir / "theta_w.dcp");
  save_params(detail::moments_as_params(s.theta_c.all(), s.adam_c), dir / "adam_c.dcp");
  save_params(detail::moments_as_params(s.theta_w.layers, s.adam_w), dir / "adam_w.dcp");
  nlohmann::json j;
  j["frame_clock"] = s.frame_clock;
  j["update_interval"] = s.cfg.update_interval ? nlohmann::json(*s.cfg.update_interval) : nlohmann::json("never");
  j["k"] = s.cfg.k;
  j["architecture"] = architecture_json(s.theta_p.arch);
  j["adam"] = {{"lr", s.cfg.adam.lr},
               {"beta1", s.cfg.adam.beta1},
               {"beta2", s.cfg.adam.beta2},
               {"epsilon", s.cfg.adam.epsilon},
               {"step_count_c", s.adam_c.step_count},
               {"step_count_w", s.adam_w.step_count},
               {"state_c", "adam_c.dcp"},
               {"state_w", "adam_w.dcp"}};
  j["params"] = {{"theta_p", "theta_p.dcp"}, {"theta_c", "theta_c.dcp"}, {"theta_w", "theta_w.dcp"}};
  write_file(dir / "ensemble.json", j.dump(2) + "\n");
}

// Restores parameters, optimizer moments and the frame clock; the loss
// settings come from cfg. History starts empty.
template <typename T>
EnsembleState<T> load_ensemble(const std::filesystem::path& dir, const Architecture& arch, EnsembleConfig cfg) {
  const auto j = nlohmann::json::parse(read_file(dir / "ensemble.json"));
  if (j.at("k").get<std::size_t>() != cfg.k) throw std::invalid_argument("checkpoint k differs from configuration");
  const auto& a = j.at("adam");
  cfg.adam = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
              a.at("epsilon").get<double>()};
  const auto& ui = j.at("update_interval");
  cfg.update_interval = ui.is_string() ? std::nullopt : std::optional<std::size_t>(ui.get<std::size_t>());
  const auto& files = j.at("params");
  auto theta_p = PredictionParams<T>::from_flat(arch, load_params<T>(dir / files.at("theta_p").get<std::string>()));
  auto theta_c = PredictionParams<T>::from_flat(arch, load_params<T>(dir / files.at("theta_c").get<std::string>()));
  auto theta_w = WeightNetParams<T>::from_flat(arch, load_params<T>(dir / files.at("theta_w").get<std::string>()));
  auto s = init_ensemble(theta_p, theta_w, cfg);
  s.theta_c = std::move(theta_c);
  s.adam_c = detail::moments_from_params(s.theta_c.all(), load_params<T>(dir / a.at("state_c").get<std::string>()),
                                         cfg.adam, a.at("step_count_c").get<std::uint64_t>());
  s.adam_w = detail::moments_from_params(s.theta_w.layers, load_params<T>(dir / a.at("state_w").get<std::string>()),
                                         cfg.adam, a.at("step_count_w").get<std::uint64_t>());
  s.frame_clock = j.at("frame_clock").get<std::uint64_t>();
  return s;
}

}  // namespace afp
