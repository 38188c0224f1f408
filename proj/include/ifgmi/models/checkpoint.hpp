#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ifgmi/data/io.hpp"
#include "ifgmi/models/classifier.hpp"
#include "ifgmi/models/generator.hpp"
#include "ifgmi/models/training.hpp"

namespace ifgmi::models {

class ArchitectureMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string architecture_tag(const GeneratorConfig& g, const DiscriminatorConfig& d) {
  std::ostringstream os;
  os << "prior/z" << g.z_dim << "-w" << g.w_dim << "-c" << g.const_channels << "x" << g.const_size << "-b";
  for (std::size_t i = 0; i < g.block_channels.size(); ++i)
    os << (i ? "," : "") << g.block_channels[i] << (g.block_upsample[i] ? "u" : "");
  os << "-d";
  for (std::size_t i = 0; i < d.widths.size(); ++i) os << (i ? "," : "") << d.widths[i];
  return os.str();
}

inline std::string architecture_tag(const ClassifierConfig& c) {
  std::ostringstream os;
  os << "classifier/" << to_string(c.variant) << "-" << c.widths[0] << "," << c.widths[1] << "," << c.widths[2]
     << "-f" << c.feature_dim << "-k" << c.classes;
  return os.str();
}

template <class T>
ParamList<T> prior_parameters(const PriorModels<T>& m) {
  ParamList<T> p;
  for (auto& [n, t] : m.generator.parameters()) p.emplace_back("generator." + n, t);
  for (auto& [n, t] : m.discriminator.parameters()) p.emplace_back("discriminator." + n, t);
  return p;
}

/// `<stem>.ifgt` holds the weights, `<stem>.json` the sidecar (architecture,
/// seed and whatever training metadata the caller adds).
template <class T>
void save_prior(const std::filesystem::path& stem, const PriorModels<T>& m, nlohmann::json sidecar) {
  sidecar["architecture"] = architecture_tag(m.generator.config, m.discriminator.config);
  save_tensors(stem.string() + ".ifgt", to_tensor_file(prior_parameters(m)));
  data::write_json(stem.string() + ".json", sidecar);
}

template <class T>
PriorModels<T> load_prior(const std::filesystem::path& stem, const GeneratorConfig& g = {},
                          const DiscriminatorConfig& d = {}) {
  const auto sidecar = data::read_json(stem.string() + ".json");
  const auto expect = architecture_tag(g, d);
  if (sidecar.value("architecture", std::string()) != expect)
    throw ArchitectureMismatch(stem.string() + ": checkpoint architecture '" +
                               sidecar.value("architecture", std::string("?")) + "' != expected '" + expect + "'");
  PriorModels<T> m{Generator<T>(g, 0), Discriminator<T>(d, 0)};
  load_parameters(load_tensors(stem.string() + ".ifgt"), prior_parameters(m), stem.string());
  return m;
}

template <class T>
void save_classifier(const std::filesystem::path& stem, const Classifier<T>& c, nlohmann::json sidecar) {
  sidecar["architecture"] = architecture_tag(c.config);
  sidecar["variant"] = to_string(c.config.variant);
  sidecar["classes"] = c.config.classes;
  save_tensors(stem.string() + ".ifgt", to_tensor_file(c.parameters()));
  data::write_json(stem.string() + ".json", sidecar);
}

template <class T>
Classifier<T> load_classifier(const std::filesystem::path& stem, ClassifierVariant variant, std::size_t classes) {
  const auto sidecar = data::read_json(stem.string() + ".json");
  const auto cfg = ClassifierConfig::for_variant(variant, classes);
  const auto expect = architecture_tag(cfg);
  if (sidecar.value("architecture", std::string()) != expect)
    throw ArchitectureMismatch(stem.string() + ": checkpoint architecture '" +
                               sidecar.value("architecture", std::string("?")) + "' != expected '" + expect + "'");
  Classifier<T> c(cfg, 0);
  load_parameters(load_tensors(stem.string() + ".ifgt"), c.parameters(), stem.string());
  return c;
}

}  // namespace ifgmi::models
