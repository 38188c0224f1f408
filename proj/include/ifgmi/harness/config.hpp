#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ifgmi/attack/inversion.hpp"
#include "ifgmi/core/rng.hpp"
#include "ifgmi/core/serialize.hpp"
#include "ifgmi/data/synthetic.hpp"

namespace ifgmi::harness {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A method to run: pixel-space, z-space, or intermediate-feature with L stages.
struct Method {
  enum class Kind { pixel, latent, ifgmi } kind = Kind::ifgmi;
  std::size_t L = 3;

  std::string name() const {
    switch (kind) {
      case Kind::pixel: return "pixel";
      case Kind::latent: return "latent";
      case Kind::ifgmi: return "ifgmi_L" + std::to_string(L);
    }
    return "?";
  }
};

/// Accepts "pixel", "latent", "ifgmi" (L from the attack config), "ifgmi:3" or "ifgmi_L3".
inline Method parse_method(const std::string& s, std::size_t default_L) {
  if (s == "pixel") return {Method::Kind::pixel, 0};
  if (s == "latent") return {Method::Kind::latent, 0};
  if (s == "ifgmi") return {Method::Kind::ifgmi, default_L};
  for (const std::string prefix : {"ifgmi:", "ifgmi_L"})
    if (s.rfind(prefix, 0) == 0 && s.size() > prefix.size()) {
      const auto digits = s.substr(prefix.size());
      if (digits.find_first_not_of("0123456789") == std::string::npos)
        return {Method::Kind::ifgmi, static_cast<std::size_t>(std::stoul(digits))};
    }
  throw ConfigError("unknown method '" + s + "' (expected pixel, latent, ifgmi or ifgmi:<L>)");
}

inline data::ShiftConfig shift_preset(const std::string& name) {
  if (name == "none") return data::ShiftConfig::none();
  if (name == "mild") return data::ShiftConfig::mild();
  if (name == "strong") return data::ShiftConfig::strong();
  throw ConfigError("unknown shift preset '" + name + "' (expected none, mild or strong)");
}

struct CorpusConfig {
  std::size_t identities = 10;
  std::size_t per_identity = 50;
  std::size_t public_size = 2000;
  std::vector<std::string> shifts{"mild"};  // public corpora to generate
};

struct TrainConfig {
  std::size_t classifier_epochs = 15;
  std::size_t prior_epochs = 10;
  std::size_t prior_batch = 32;
  std::size_t fid_samples = 1000;
};

struct MetricConfig {
  bool prdc = true;
  std::size_t prdc_k = 3;
  std::string delta_mode = "per-sample";  // or per-class
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> radius_scales{0.0, 0.5, 1.0, 2.0};
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  CorpusConfig corpus;
  std::string prior_shift = "mild";  // public corpus the prior is trained on and attacked with
  TrainConfig train;
  attack::AttackConfig attack;
  std::vector<std::string> methods{"pixel", "latent", "ifgmi:3"};
  std::vector<int> classes;  // empty: every identity
  std::vector<std::uint64_t> attack_seeds{0};
  MetricConfig metrics;
  AblationConfig ablation;
  std::size_t threads = 1;

  std::vector<Method> parsed_methods() const {
    std::vector<Method> out;
    std::set<std::string> seen;
    for (const auto& m : methods) {
      auto pm = parse_method(m, attack.L);
      if (!seen.insert(pm.name()).second) throw ConfigError("method '" + pm.name() + "' listed twice");
      out.push_back(pm);
    }
    return out;
  }

  std::vector<int> target_classes() const {
    if (!classes.empty()) return classes;
    std::vector<int> all(corpus.identities);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }

  /// The attack configuration for an intermediate-feature method with L stages.
  attack::AttackConfig attack_for(std::size_t L) const {
    auto base = attack;
    if (L > base.L) {
      throw ConfigError("method ifgmi:" + std::to_string(L) + " exceeds attack.L = " + std::to_string(base.L));
    }
    base.threads = threads;
    return base.truncated(L);
  }

  void validate() const {
    if (corpus.identities < 2) throw ConfigError("corpus.identities must be at least 2");
    if (corpus.shifts.empty()) throw ConfigError("corpus.shifts must list at least one preset");
    for (const auto& s : corpus.shifts) shift_preset(s);
    shift_preset(prior_shift);
    if (methods.empty()) throw ConfigError("methods must not be empty");
    parsed_methods();
    for (int c : target_classes())
      if (c < 0 || static_cast<std::size_t>(c) >= corpus.identities)
        throw ConfigError("class " + std::to_string(c) + " outside 0.." + std::to_string(corpus.identities - 1));
    if (attack_seeds.empty()) throw ConfigError("attack_seeds must not be empty");
    if (ablation.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
    if (metrics.delta_mode != "per-sample" && metrics.delta_mode != "per-class")
      throw ConfigError("metrics.delta_mode must be per-sample or per-class");
    if (threads == 0) throw ConfigError("threads must be at least 1");
    try {
      attack.validate(4);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const attack::AttackConfig& a) {
  return json{{"L", a.L},
              {"split_points", a.split_points},
              {"steps", a.steps},
              {"radii", a.radii},
              {"candidates", a.candidates},
              {"select", a.select},
              {"n_aug", a.n_aug},
              {"adam", {{"lr", a.adam.lr}, {"beta1", a.adam.beta1}, {"beta2", a.adam.beta2}, {"eps", a.adam.eps}}},
              {"lambda", a.lambda},
              {"pixel_steps", a.pixel_steps},
              {"latent_steps", a.latent_steps},
              {"final_strategy", attack::to_string(a.final_strategy)},
              {"confidence", attack::to_string(a.confidence)},
              {"batch", a.batch}};
}

inline json to_json(const ExperimentConfig& c) {
  return json{
      {"seed", c.seed},
      {"corpus",
       {{"identities", c.corpus.identities},
        {"per_identity", c.corpus.per_identity},
        {"public_size", c.corpus.public_size},
        {"shifts", c.corpus.shifts}}},
      {"prior_shift", c.prior_shift},
      {"train",
       {{"classifier_epochs", c.train.classifier_epochs},
        {"prior_epochs", c.train.prior_epochs},
        {"prior_batch", c.train.prior_batch},
        {"fid_samples", c.train.fid_samples}}},
      {"attack", to_json(c.attack)},
      {"methods", c.methods},
      {"classes", c.classes},
      {"attack_seeds", c.attack_seeds},
      {"metrics", {{"prdc", c.metrics.prdc}, {"prdc_k", c.metrics.prdc_k}, {"delta_mode", c.metrics.delta_mode}}},
      {"ablation", {{"seeds", c.ablation.seeds}, {"radius_scales", c.ablation.radius_scales}}},
      {"threads", c.threads},
  };
}

namespace detail {

// Reads known keys into their fields and rejects anything else, so a typo
// in a config file is an error instead of a silently ignored setting.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }
  template <class V>
  void get(const std::string& key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  const json* sub(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const std::string& key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

}  // namespace detail

inline attack::AttackConfig attack_from_json(const json& j, attack::AttackConfig a = {}) {
  detail::ObjectReader r(j, "attack");
  r.get("L", a.L);
  r.get("split_points", a.split_points);
  r.get("steps", a.steps);
  r.get("radii", a.radii);
  r.get("candidates", a.candidates);
  r.get("select", a.select);
  r.get("n_aug", a.n_aug);
  if (const auto* adam = r.sub("adam")) {
    detail::ObjectReader ar(*adam, "attack.adam");
    ar.get("lr", a.adam.lr);
    ar.get("beta1", a.adam.beta1);
    ar.get("beta2", a.adam.beta2);
    ar.get("eps", a.adam.eps);
    ar.done();
  }
  r.get("lambda", a.lambda);
  r.get("pixel_steps", a.pixel_steps);
  r.get("latent_steps", a.latent_steps);
  std::string strategy = attack::to_string(a.final_strategy), confidence = attack::to_string(a.confidence);
  r.get("final_strategy", strategy);
  r.get("confidence", confidence);
  try {
    a.final_strategy = attack::strategy_from_string(strategy);
    a.confidence = attack::confidence_from_string(confidence);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  r.get("batch", a.batch);
  r.done();
  return a;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::ObjectReader r(j, "config");
  r.get("seed", c.seed);
  if (const auto* s = r.sub("corpus")) {
    detail::ObjectReader cr(*s, "corpus");
    cr.get("identities", c.corpus.identities);
    cr.get("per_identity", c.corpus.per_identity);
    cr.get("public_size", c.corpus.public_size);
    cr.get("shifts", c.corpus.shifts);
    cr.done();
  }
  r.get("prior_shift", c.prior_shift);
  if (const auto* s = r.sub("train")) {
    detail::ObjectReader tr(*s, "train");
    tr.get("classifier_epochs", c.train.classifier_epochs);
    tr.get("prior_epochs", c.train.prior_epochs);
    tr.get("prior_batch", c.train.prior_batch);
    tr.get("fid_samples", c.train.fid_samples);
    tr.done();
  }
  if (const auto* s = r.sub("attack")) c.attack = attack_from_json(*s, c.attack);
  r.get("methods", c.methods);
  r.get("classes", c.classes);
  r.get("attack_seeds", c.attack_seeds);
  if (const auto* s = r.sub("metrics")) {
    detail::ObjectReader mr(*s, "metrics");
    mr.get("prdc", c.metrics.prdc);
    mr.get("prdc_k", c.metrics.prdc_k);
    mr.get("delta_mode", c.metrics.delta_mode);
    mr.done();
  }
  if (const auto* s = r.sub("ablation")) {
    detail::ObjectReader ab(*s, "ablation");
    ab.get("seeds", c.ablation.seeds);
    ab.get("radius_scales", c.ablation.radius_scales);
    ab.done();
  }
  r.get("threads", c.threads);
  r.done();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// Hash of the canonical (sorted-key, compact) JSON form.
inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Output layout and seeds

struct Layout {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path data_dir() const { return root / "data"; }
  fs::path private_stem() const { return data_dir() / "private"; }
  fs::path public_stem(const std::string& shift) const { return data_dir() / ("public_" + shift); }
  fs::path models_dir() const { return root / "models"; }
  fs::path classifier_stem(const std::string& variant) const { return models_dir() / variant; }
  fs::path prior_stem(const std::string& shift) const { return models_dir() / ("prior_" + shift); }
  fs::path attack_dir(const std::string& method, std::uint64_t seed) const {
    return root / "attacks" / method / ("seed_" + std::to_string(seed));
  }
  fs::path report_dir() const { return root / "report"; }
  fs::path ablation_dir() const { return root / "ablation"; }
};

struct Seeds {
  std::uint64_t master;

  std::uint64_t corpus() const { return derive_seed(master, "corpus"); }
  std::uint64_t public_corpus(const std::string& shift) const { return derive_seed(master, "public/" + shift); }
  std::uint64_t classifier_init(const std::string& variant) const { return derive_seed(master, "init/" + variant); }
  std::uint64_t classifier_train(const std::string& variant) const { return derive_seed(master, "train/" + variant); }
  std::uint64_t prior(const std::string& shift) const { return derive_seed(master, "train/prior/" + shift); }
  std::uint64_t attack(std::uint64_t index) const { return derive_seed(master, "attack", index); }
  std::uint64_t fid_latents() const { return derive_seed(master, "fid-latents"); }
};

}  // namespace ifgmi::harness
