// Run configuration: strict JSON parsing and the resolved snapshot.

#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "afp/harness.hpp"

namespace afp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RunMode { pretrain, eval, stream };

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::pretrain: return "pretrain";
    case RunMode::eval: return "eval";
    case RunMode::stream: return "stream";
  }
  return "?";
}

struct RunConfig {
  RunMode mode = RunMode::pretrain;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  Architecture architecture;

  MuWeights mu_offline = MuWeights::offline();
  MuWeights mu_online = MuWeights::online();
  PretrainWeights pretrain_weights;
  double lambda_c = 0.1;
  std::uint64_t extractor_seed = 7;

  AdamConfig optimizer;

  std::size_t k = 1;
  double crop_fraction = 0.9;
  std::size_t height = 64;
  std::size_t width = 64;
  StreamScript train;
  StreamScript test;
  StreamScript stream;
  std::optional<std::string> input_dir;  // replaces the scene script for eval/stream

  std::size_t epochs = 100;
  std::optional<std::size_t> update_interval = 1;  // nullopt = never
  std::size_t trend_window = 100;
  std::size_t dump_every = 0;

  EnsembleConfig ensemble() const {
    EnsembleConfig c;
    c.k = k;
    c.update_interval = update_interval;
    c.lambda_c = lambda_c;
    c.mu_online = mu_online;
    c.adam = optimizer;
    return c;
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig c;
    c.epochs = epochs;
    c.lambdas = pretrain_weights;
    c.mu = mu_offline;
    c.adam = optimizer;
    c.seed = seed;
    c.extractor_seed = extractor_seed;
    return c;
  }
};

namespace detail {

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename V>
  void read(const std::string& key, V& out) {
    const auto* v = get(key);
    if (!v) return;
    out = convert<V>(*v, field(key));
  }

  template <typename V>
  V require(const std::string& key) {
    const auto* v = get(key);
    if (!v) throw ConfigError("missing required field '" + field(key) + "'");
    return convert<V>(*v, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + field(it.key()) + "'");
  }

  template <typename V>
  static V convert(const nlohmann::json& v, const std::string& name) {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + name + "' must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError("'" + name + "' must be a non-negative integer");
      return static_cast<V>(v.get<unsigned long long>());
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("'" + name + "' must be a number");
      return v.get<V>();
    } else {
      if (!v.is_string()) throw ConfigError("'" + name + "' must be a string");
      return v.get<std::string>();
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline MuWeights parse_mu(const nlohmann::json& j, const std::string& path, MuWeights w) {
  ObjectReader r(j, path);
  r.read("mse_intensity", w.rho_msei);
  r.read("mse_gradient", w.rho_msed);
  r.read("ssim", w.rho_ssim);
  r.read("perceptual", w.rho_per);
  r.finish();
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
  return w;
}

inline nlohmann::json mu_json(const MuWeights& w) {
  return {{"mse_intensity", w.rho_msei}, {"mse_gradient", w.rho_msed}, {"ssim", w.rho_ssim}, {"perceptual", w.rho_per}};
}

inline std::pair<double, double> parse_range(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError("'" + path + "' must be a [min, max] pair of numbers");
  const double lo = j[0].get<double>(), hi = j[1].get<double>();
  if (lo > hi) throw ConfigError("'" + path + "': min exceeds max");
  return {lo, hi};
}

inline StreamScript parse_script(const nlohmann::json& j, const std::string& path, std::size_t H, std::size_t W) {
  if (!j.is_array() || j.empty()) throw ConfigError("'" + path + "' must be a non-empty array of scenes");
  StreamScript script;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    ObjectReader r(j[i], p);
    ScriptEntry e;
    try {
      e.scene.kind = scene_kind_from_string(r.require<std::string>("kind"));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError("'" + r.field("kind") + "': " + ex.what());
    }
    r.read("num_objects", e.scene.num_objects);
    if (const auto* v = r.get("velocity")) {
      ObjectReader vr(*v, r.field("velocity"));
      if (const auto* x = vr.get("x")) std::tie(e.scene.velocity.x_min, e.scene.velocity.x_max) = parse_range(*x, vr.field("x"));
      if (const auto* y = vr.get("y")) std::tie(e.scene.velocity.y_min, e.scene.velocity.y_max) = parse_range(*y, vr.field("y"));
      vr.finish();
    }
    r.read("texture_seed", e.scene.texture_seed);
    e.scene.length = r.require<std::size_t>("length");
    r.read("seed", e.scene.seed);
    r.read("repeat", e.repeat);
    r.finish();
    if (e.repeat < 1) throw ConfigError("'" + r.field("repeat") + "' must be >= 1");
    e.scene.height = H;
    e.scene.width = W;
    script.push_back(e);
  }
  return script;
}

inline nlohmann::json script_json(const StreamScript& s) {
  auto out = nlohmann::json::array();
  for (const auto& e : s) {
    const auto& v = e.scene.velocity;
    out.push_back({{"kind", to_string(e.scene.kind)},
                   {"num_objects", e.scene.num_objects},
                   {"velocity", {{"x", {v.x_min, v.x_max}}, {"y", {v.y_min, v.y_max}}}},
                   {"texture_seed", e.scene.texture_seed},
                   {"length", e.scene.length},
                   {"seed", e.scene.seed},
                   {"repeat", e.repeat}});
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  RunConfig c;
  ObjectReader top(j, "");
  const auto mode = top.require<std::string>("mode");
  if (mode == "pretrain") c.mode = RunMode::pretrain;
  else if (mode == "eval") c.mode = RunMode::eval;
  else if (mode == "stream") c.mode = RunMode::stream;
  else throw ConfigError("'mode' must be one of pretrain, eval, stream (got '" + mode + "')");
  top.read("seed", c.seed);
  top.read("output_dir", c.output_dir);

  if (const auto* a = top.get("architecture")) {
    ObjectReader r(*a, "architecture");
    auto& arch = c.architecture;
    r.read("edvf_depth", arch.edvf_depth);
    r.read("edvf_base", arch.edvf_base);
    r.read("refine_depth", arch.refine_depth);
    r.read("refine_base", arch.refine_base);
    r.read("weight_depth", arch.weight_depth);
    r.read("weight_base", arch.weight_base);
    r.read("max_disp", arch.max_disp);
    r.finish();
  }
  try {
    c.architecture.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (const auto* l = top.get("loss")) {
    ObjectReader r(*l, "loss");
    if (const auto* m = r.get("mu_offline")) c.mu_offline = detail::parse_mu(*m, "loss.mu_offline", c.mu_offline);
    if (const auto* m = r.get("mu_online")) c.mu_online = detail::parse_mu(*m, "loss.mu_online", c.mu_online);
    if (const auto* p = r.get("pretrain")) {
      ObjectReader pr(*p, "loss.pretrain");
      pr.read("edvf", c.pretrain_weights.lambda_e);
      pr.read("refine1", c.pretrain_weights.lambda_r1);
      pr.read("refine2", c.pretrain_weights.lambda_r2);
      pr.read("flow_smoothness", c.pretrain_weights.lambda_of);
      pr.finish();
      try {
        c.pretrain_weights.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("'loss.pretrain': ") + e.what());
      }
    }
    r.read("lambda_c", c.lambda_c);
    r.read("extractor_seed", c.extractor_seed);
    r.finish();
  }
  if (!(c.lambda_c >= 0)) throw ConfigError("'loss.lambda_c' must be >= 0");
  if (c.mu_online.rho_per != 0)
    throw ConfigError("'loss.mu_online.perceptual' must be 0 (online updates carry no feature extractor)");

  if (const auto* o = top.get("optimizer")) {
    ObjectReader r(*o, "optimizer");
    r.read("lr", c.optimizer.lr);
    r.read("beta1", c.optimizer.beta1);
    r.read("beta2", c.optimizer.beta2);
    r.read("epsilon", c.optimizer.epsilon);
    r.finish();
  }
  if (!(c.optimizer.lr > 0)) throw ConfigError("'optimizer.lr' must be positive");
  if (!(c.optimizer.beta1 > 0 && c.optimizer.beta1 < 1)) throw ConfigError("'optimizer.beta1' must be in (0,1)");
  if (!(c.optimizer.beta2 > 0 && c.optimizer.beta2 < 1)) throw ConfigError("'optimizer.beta2' must be in (0,1)");
  if (!(c.optimizer.epsilon > 0)) throw ConfigError("'optimizer.epsilon' must be positive");

  const nlohmann::json* train = nullptr;
  const nlohmann::json* test = nullptr;
  const nlohmann::json* stream = nullptr;
  if (const auto* d = top.get("data")) {
    ObjectReader r(*d, "data");
    r.read("k", c.k);
    r.read("crop_fraction", c.crop_fraction);
    r.read("height", c.height);
    r.read("width", c.width);
    train = r.get("train");
    test = r.get("test");
    stream = r.get("stream");
    if (const auto* in = r.get("input_dir")) c.input_dir = ObjectReader::convert<std::string>(*in, "data.input_dir");
    r.finish();
  }
  if (c.k < 1) throw ConfigError("'data.k' must be >= 1");
  if (!(c.crop_fraction > 0 && c.crop_fraction <= 1)) throw ConfigError("'data.crop_fraction' must be in (0,1]");
  const std::size_t m = c.architecture.required_multiple();
  if (c.height < 1 || c.width < 1 || c.height % m || c.width % m)
    throw ConfigError("'data.height' and 'data.width' must be positive multiples of " + std::to_string(m) +
                      " for this architecture");
  if (train) c.train = detail::parse_script(*train, "data.train", c.height, c.width);
  if (test) c.test = detail::parse_script(*test, "data.test", c.height, c.width);
  if (stream) c.stream = detail::parse_script(*stream, "data.stream", c.height, c.width);

  for (const auto* s : {&c.train, &c.test, &c.stream})
    for (std::size_t i = 0; i < s->size(); ++i)
      if ((*s)[i].scene.velocity.max_abs() > c.architecture.max_disp)
        throw ConfigError("scene velocity " + std::to_string((*s)[i].scene.velocity.max_abs()) +
                          " px/frame exceeds architecture.max_disp");

  switch (c.mode) {
    case RunMode::pretrain:
      if (!train) throw ConfigError("missing required field 'data.train'");
      break;
    case RunMode::eval:
      if (!test && !c.input_dir) throw ConfigError("missing required field 'data.test' (or 'data.input_dir')");
      break;
    case RunMode::stream:
      if (!stream && !c.input_dir) throw ConfigError("missing required field 'data.stream' (or 'data.input_dir')");
      break;
  }

  if (const auto* s = top.get("schedule")) {
    ObjectReader r(*s, "schedule");
    r.read("epochs", c.epochs);
    if (const auto* u = r.get("update_interval")) {
      if (u->is_string() && u->get<std::string>() == "never") {
        c.update_interval.reset();
      } else {
        c.update_interval = ObjectReader::convert<std::size_t>(*u, "schedule.update_interval");
        if (*c.update_interval < 1) throw ConfigError("'schedule.update_interval' must be >= 1 or \"never\"");
      }
    }
    r.read("trend_window", c.trend_window);
    r.read("dump_every", c.dump_every);
    r.finish();
  }
  if (c.epochs < 1) throw ConfigError("'schedule.epochs' must be >= 1");
  if (c.trend_window < 1) throw ConfigError("'schedule.trend_window' must be >= 1");
  top.finish();
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

// Every field spelled out, so the snapshot alone reproduces the run.
inline nlohmann::json resolved_json(const RunConfig& c) {
  nlohmann::json j;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["architecture"] = architecture_json(c.architecture);
  j["loss"] = {{"mu_offline", detail::mu_json(c.mu_offline)},
               {"mu_online", detail::mu_json(c.mu_online)},
               {"pretrain",
                {{"edvf", c.pretrain_weights.lambda_e},
                 {"refine1", c.pretrain_weights.lambda_r1},
                 {"refine2", c.pretrain_weights.lambda_r2},
                 {"flow_smoothness", c.pretrain_weights.lambda_of}}},
               {"lambda_c", c.lambda_c},
               {"extractor_seed", c.extractor_seed}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"epsilon", c.optimizer.epsilon}};
  nlohmann::json data = {{"k", c.k}, {"crop_fraction", c.crop_fraction}, {"height", c.height}, {"width", c.width}};
  if (!c.train.empty()) data["train"] = detail::script_json(c.train);
  if (!c.test.empty()) data["test"] = detail::script_json(c.test);
  if (!c.stream.empty()) data["stream"] = detail::script_json(c.stream);
  if (c.input_dir) data["input_dir"] = *c.input_dir;
  j["data"] = data;
  j["schedule"] = {{"epochs", c.epochs},
                   {"update_interval", c.update_interval ? nlohmann::json(*c.update_interval) : nlohmann::json("never")},
                   {"trend_window", c.trend_window},
                   {"dump_every", c.dump_every}};
  return j;
}

}  // namespace afp
