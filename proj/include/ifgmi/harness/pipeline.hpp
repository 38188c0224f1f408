#pragma once

// End-to-end orchestration: corpora, checkpoints, attack runs, reports and
// ablation sweeps, all rooted in one output directory.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "ifgmi/attack/inversion.hpp"
#include "ifgmi/data/io.hpp"
#include "ifgmi/harness/config.hpp"
#include "ifgmi/metrics/metrics.hpp"
#include "ifgmi/models/checkpoint.hpp"

namespace ifgmi::harness {

/// A required input artifact is not on disk.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void require_file(const fs::path& p, const std::string& what, const std::string& hint) {
  if (!fs::exists(p)) throw MissingArtifact("missing " + what + ": " + p.string() + " (" + hint + ")");
}

/// Creates `dir` and proves it is writable.
inline void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto probe = dir / ".write-probe";
  std::ofstream os(probe);
  if (ec || !os) throw std::runtime_error("output directory not writable: " + dir.string());
  os.close();
  fs::remove(probe, ec);
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

struct Summary {
  double mean = 0, stddev = 0;
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// [K * cols] grid tensor: row k holds the first `cols` images of class k,
/// padded with black when a class has fewer.
inline Tensor<float> class_rows(const Tensor<float>& images, const std::vector<int>& labels,
                                const std::vector<int>& classes, std::size_t cols, std::size_t offset = 0) {
  Tensor<float> out(Shape{classes.size() * cols, data::kChannels, data::kSize, data::kSize}, -1.f);
  for (std::size_t r = 0; r < classes.size(); ++r) {
    std::size_t placed = 0;
    for (std::size_t i = 0; i < labels.size() && placed < cols; ++i)
      if (labels[i] == classes[r]) {
        std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(i * data::kPixels), data::kPixels,
                    out.data_mut().begin() + static_cast<std::ptrdiff_t>(((r * cols) + placed + offset) * data::kPixels));
        if (++placed + offset >= cols) break;
      }
  }
  return out;
}

/// Reconstructions of one attack run, in class order.
struct AttackArtifacts {
  Tensor<float> images;
  std::vector<int> classes;
};

inline void save_artifacts(const fs::path& dir, const AttackArtifacts& a) {
  save_tensors(dir / "final.ifgt",
               {NamedTensor::from("images", a.images), NamedTensor::from("classes", data::labels_tensor(a.classes))});
}

inline AttackArtifacts load_artifacts(const fs::path& dir) {
  require_file(dir / "final.ifgt", "attack output", "run `ifgmi attack` first");
  const auto f = load_tensors(dir / "final.ifgt");
  return {find_tensor(f, "images").as<float>(), data::labels_from(find_tensor(f, "classes").as<float>())};
}

class Experiment {
 public:
  Experiment(ExperimentConfig cfg, fs::path out, std::ostream* log = &std::cerr)
      : cfg_(std::move(cfg)), layout_{std::move(out)}, seeds_{cfg_.seed}, log_(log) {
    cfg_.validate();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Layout& layout() const { return layout_; }
  const Seeds& seeds() const { return seeds_; }

  /// Writes the effective configuration (defaults included) next to the outputs.
  void echo_config() const {
    ensure_writable(layout_.root);
    auto j = to_json(cfg_);
    data::write_json(layout_.config(), j);
  }

  // -------------------------------------------------------------------------
  // gen-data

  json gen_data() const {
    ensure_writable(layout_.data_dir());
    echo_config();
    const auto t0 = Clock::now();
    json out;
    auto priv = data::make_private_dataset(seeds_.corpus(), cfg_.corpus.identities, cfg_.corpus.per_identity);
    data::save_dataset(layout_.private_stem(), priv);
    out["private"] = data::to_json(priv.manifest);
    note("private corpus: " + std::to_string(priv.train.size()) + " train / " + std::to_string(priv.test.size()) +
         " test, checksum " + priv.manifest.checksum);
    for (const auto& shift : cfg_.corpus.shifts) {
      auto pub = data::make_public_dataset(seeds_.public_corpus(shift), cfg_.corpus.public_size, shift_preset(shift));
      data::save_dataset(layout_.public_stem(shift), pub);
      out["public"][shift] = data::to_json(pub.manifest);
      note("public corpus '" + shift + "': " + std::to_string(cfg_.corpus.public_size) + " images, checksum " +
           pub.manifest.checksum);
    }
    out["seconds"] = seconds_since(t0);
    return out;
  }

  // -------------------------------------------------------------------------
  // train

  json train(const std::string& which) const {
    ensure_writable(layout_.models_dir());
    if (which == "all") {
      json out;
      for (const auto* w : {"target", "eval", "indep", "prior"}) out[w] = train(w);
      return out;
    }
    if (which == "prior") return train_prior();
    if (which == "target" || which == "eval" || which == "indep")
      return train_classifier(models::variant_from_string(which));
    throw ConfigError("unknown training target '" + which + "' (expected prior, target, eval, indep or all)");
  }

  // -------------------------------------------------------------------------
  // attack

  json attack() const {
    const auto t0 = Clock::now();
    echo_config();
    const auto prior_stem = layout_.prior_stem(cfg_.prior_shift);
    require_file(prior_stem.string() + ".ifgt", "prior checkpoint", "run `ifgmi train prior` first");
    require_file(layout_.classifier_stem("target").string() + ".ifgt", "target classifier",
                 "run `ifgmi train target` first");
    const auto prior = models::load_prior<float>(prior_stem);
    const auto target = load_classifier(models::ClassifierVariant::target);

    json out = json::array();
    for (auto s : cfg_.attack_seeds)
      for (const auto& m : cfg_.parsed_methods()) out.push_back(run_method(m, s, prior, target));
    note("attack stage finished in " + fmt(seconds_since(t0)) + " s");
    return out;
  }

  // -------------------------------------------------------------------------
  // evaluate

  json evaluate() const {
    const auto t0 = Clock::now();
    echo_config();
    ensure_writable(layout_.report_dir());
    const auto priv = load_private();
    const auto eval = load_classifier(models::ClassifierVariant::evaluation);
    const auto indep = load_classifier(models::ClassifierVariant::independent);
    const auto priv_eval = metrics::to_matrix(models::extract_features(eval, priv.train.images));
    const auto priv_indep = metrics::to_matrix(models::extract_features(indep, priv.train.images));
    const auto classes = cfg_.target_classes();

    std::vector<json> rows;
    std::map<std::string, std::map<std::string, std::vector<double>>> per_method;
    std::ostringstream csv;
    csv << "method,shift,seed,acc1,acc5,delta_eval,delta_indep,fid,precision,recall,density,coverage,failures,"
           "nonfinite,attack_seconds\n";
    for (auto s : cfg_.attack_seeds)
      for (const auto& m : cfg_.parsed_methods()) {
        const auto dir = layout_.attack_dir(m.name(), s);
        const auto art = load_artifacts(dir);
        const auto result = data::read_json(dir / "result.json");
        auto row = evaluate_images(art, priv, eval, indep, priv_eval, priv_indep);
        row["method"] = m.name();
        row["shift"] = cfg_.prior_shift;
        row["seed"] = s;
        row["failures"] = result.value("failures", 0);
        row["attack_seconds"] = result.value("seconds", 0.0);
        for (const auto& [k, v] : row.items())
          if (v.is_number_float() && !std::isfinite(v.get<double>()))
            throw std::runtime_error("non-finite " + k + " for " + m.name() + " seed " + std::to_string(s));
        for (const auto* key : {"acc1", "acc5", "delta_eval", "delta_indep", "fid"})
          per_method[m.name()][key].push_back(row[key].get<double>());
        csv << m.name() << ',' << cfg_.prior_shift << ',' << s;
        for (const auto* key : {"acc1", "acc5", "delta_eval", "delta_indep", "fid", "precision", "recall", "density",
                                "coverage"})
          csv << ',' << fmt(row.value(key, 0.0));
        csv << ',' << row["failures"].get<std::size_t>() << ',' << row["nonfinite"].get<std::size_t>() << ','
            << fmt(row["attack_seconds"].get<double>()) << '\n';
        rows.push_back(row);

        // Private exemplars on the left, reconstructions on the right.
        auto left = class_rows(priv.train.images, priv.train.labels, classes, 8, 0);
        auto right = class_rows(art.images, art.classes, classes, 8, 4);
        for (std::size_t r = 0; r < classes.size(); ++r)
          std::copy_n(right.data().begin() + static_cast<std::ptrdiff_t>((r * 8 + 4) * data::kPixels),
                      4 * data::kPixels,
                      left.data_mut().begin() + static_cast<std::ptrdiff_t>((r * 8 + 4) * data::kPixels));
        data::write_ppm_grid(layout_.report_dir() / ("comparison_" + m.name() + "_seed" + std::to_string(s) + ".ppm"),
                             left, 8);
      }

    json summary;
    for (const auto& [name, cols] : per_method)
      for (const auto& [key, vals] : cols) {
        const auto sm = summarize(vals);
        summary[name][key] = {{"mean", sm.mean}, {"std", sm.stddev}};
      }
    json report{{"config_hash", config_hash(cfg_)},
                {"version", kVersion},
                {"seed", cfg_.seed},
                {"attack_seeds", cfg_.attack_seeds},
                {"columns", {"acc1", "acc5", "delta_indep", "delta_eval", "fid", "precision", "recall", "density",
                             "coverage"}},
                {"rows", rows},
                {"summary", summary},
                {"evaluate_seconds", seconds_since(t0)}};
    write_text(layout_.report_dir() / "report.csv", csv.str());
    data::write_json(layout_.report_dir() / "report.json", report);
    note("report: " + std::to_string(rows.size()) + " rows in " + (layout_.report_dir() / "report.csv").string());
    return report;
  }

  /// Metric row for one reconstruction set. Non-finite images count as
  /// misses and are left out of the feature-space metrics.
  json evaluate_images(const AttackArtifacts& art, const data::PrivateDataset& priv,
                       const models::Classifier<float>& eval, const models::Classifier<float>& indep,
                       const metrics::Matrix& priv_eval, const metrics::Matrix& priv_indep) const {
    const std::size_t n = art.classes.size(), classes = cfg_.corpus.identities;
    std::vector<std::size_t> finite_rows;
    for (std::size_t i = 0; i < n; ++i) {
      bool ok = true;
      for (std::size_t k = 0; k < data::kPixels && ok; ++k) ok = std::isfinite(art.images[i * data::kPixels + k]);
      if (ok) finite_rows.push_back(i);
    }
    json row;
    row["images"] = n;
    row["nonfinite"] = n - finite_rows.size();
    if (finite_rows.empty()) throw std::runtime_error("evaluate: every reconstruction is non-finite");
    const auto images = data::take(art.images, finite_rows);
    std::vector<int> cls;
    for (auto i : finite_rows) cls.push_back(art.classes[i]);

    const auto logits = metrics::to_matrix(models::predict_logits(eval, images));
    const double scale = static_cast<double>(finite_rows.size()) / static_cast<double>(n);
    row["acc1"] = metrics::acc_at_k(logits, cls, 1) * scale;
    row["acc5"] = metrics::acc_at_k(logits, cls, std::min<std::size_t>(5, classes)) * scale;

    const auto mode = cfg_.metrics.delta_mode == "per-class" ? metrics::DeltaMode::per_class
                                                             : metrics::DeltaMode::per_sample;
    const auto rec_eval = metrics::to_matrix(models::extract_features(eval, images));
    const auto rec_indep = metrics::to_matrix(models::extract_features(indep, images));
    row["delta_eval"] = metrics::feature_distance(rec_eval, cls, priv_eval, priv.train.labels, mode);
    row["delta_indep"] = metrics::feature_distance(rec_indep, cls, priv_indep, priv.train.labels, mode);

    // Distribution metrics against the private images of the attacked classes.
    std::vector<Eigen::Index> real_rows;
    for (std::size_t i = 0; i < priv.train.labels.size(); ++i)
      if (std::find(cls.begin(), cls.end(), priv.train.labels[i]) != cls.end())
        real_rows.push_back(static_cast<Eigen::Index>(i));
    const metrics::Matrix real = priv_eval(real_rows, Eigen::all);
    row["fid"] = (rec_eval.rows() >= 2) ? metrics::fid(real, rec_eval) : 0.0;
    if (cfg_.metrics.prdc && static_cast<std::size_t>(rec_eval.rows()) > cfg_.metrics.prdc_k) {
      const auto p = metrics::prdc(real, rec_eval, cfg_.metrics.prdc_k);
      row["precision"] = p.precision;
      row["recall"] = p.recall;
      row["density"] = p.density;
      row["coverage"] = p.coverage;
    }
    return row;
  }

  // -------------------------------------------------------------------------
  // ablate

  /// Eval-model Acc@1/Acc@5 per (axis value, seed); writes long and summary CSVs.
  json ablate(const std::string& axis) const {
    if (axis != "L" && axis != "radii" && axis != "decomposition")
      throw ConfigError("unknown ablation axis '" + axis + "' (expected L, radii or decomposition)");
    const auto t0 = Clock::now();
    echo_config();
    ensure_writable(layout_.ablation_dir());
    const auto prior_stem = layout_.prior_stem(cfg_.prior_shift);
    require_file(prior_stem.string() + ".ifgt", "prior checkpoint", "run `ifgmi train prior` first");
    const auto prior = models::load_prior<float>(prior_stem);
    const auto target = load_classifier(models::ClassifierVariant::target);
    const auto eval = load_classifier(models::ClassifierVariant::evaluation);
    const auto classes = cfg_.target_classes();

    // axis value -> per-seed (acc1, acc5)
    std::vector<std::string> labels;
    std::map<std::string, std::vector<std::pair<double, double>>> acc;
    auto score = [&](const std::string& label, const std::vector<Tensor<float>>& finals) {
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
      std::size_t hit1 = 0, hit5 = 0, total = 0;
      for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        const auto logits = metrics::to_matrix(models::predict_logits(eval, finals[ci]));
        const std::vector<int> t(static_cast<std::size_t>(logits.rows()), classes[ci]);
        hit1 += static_cast<std::size_t>(std::lround(metrics::acc_at_k(logits, t, 1) * double(t.size())));
        hit5 += static_cast<std::size_t>(
            std::lround(metrics::acc_at_k(logits, t, std::min<std::size_t>(5, cfg_.corpus.identities)) * double(t.size())));
        total += t.size();
      }
      acc[label].emplace_back(double(hit1) / double(total), double(hit5) / double(total));
    };

    const auto& base = cfg_.attack;
    for (auto s : cfg_.ablation.seeds) {
      const auto aseed = seeds_.attack(s);
      if (axis == "L") {
        // One full run per class; shorter L are exact truncations of it.
        std::vector<attack::AttackResult<float>> runs;
        for (int c : classes) runs.push_back(attack::optimize_intermediate(prior.generator, target, c, cfg_.attack_for(base.L), aseed));
        for (std::size_t l = 0; l <= base.L; ++l) {
          std::vector<Tensor<float>> finals;
          for (const auto& r : runs) finals.push_back(attack::truncate_result(r, l, base.final_strategy).final_images);
          score(std::to_string(l), finals);
        }
      } else if (axis == "radii") {
        for (double scale : cfg_.ablation.radius_scales) {
          auto ac = cfg_.attack_for(base.L);
          for (auto& r : ac.radii) r *= scale;
          std::vector<Tensor<float>> finals;
          for (int c : classes) finals.push_back(attack::optimize_intermediate(prior.generator, target, c, ac, aseed).final_images);
          score(fmt(scale), finals);
        }
      } else {
        const std::size_t blocks = prior.generator.synthesis.num_blocks();
        for (std::size_t split = 1; split <= blocks; ++split) {
          auto ac = cfg_.attack_for(1);
          ac.split_points = {split};
          std::vector<Tensor<float>> finals, w_only;
          for (int c : classes) {
            auto r = attack::optimize_intermediate(prior.generator, target, c, ac, aseed);
            finals.push_back(r.final_images);
            if (split == 1) w_only.push_back(attack::truncate_result(r, 0, ac.final_strategy).final_images);
          }
          if (split == 1) score("none", w_only);
          score(std::to_string(split), finals);
        }
      }
      note("ablation " + axis + ": seed " + std::to_string(s) + " done at " + fmt(seconds_since(t0)) + " s");
    }

    std::ostringstream long_csv, table;
    long_csv << axis << ",seed,acc1,acc5\n";
    table << axis << ",acc1_mean,acc1_std,acc5_mean,acc5_std,seeds\n";
    json rows = json::array();
    for (const auto& label : labels) {
      std::vector<double> a1, a5;
      for (std::size_t i = 0; i < acc[label].size(); ++i) {
        a1.push_back(acc[label][i].first);
        a5.push_back(acc[label][i].second);
        long_csv << label << ',' << cfg_.ablation.seeds[i] << ',' << fmt(a1.back()) << ',' << fmt(a5.back()) << '\n';
      }
      const auto s1 = summarize(a1), s5 = summarize(a5);
      table << label << ',' << fmt(s1.mean) << ',' << fmt(s1.stddev) << ',' << fmt(s5.mean) << ',' << fmt(s5.stddev)
            << ',' << a1.size() << '\n';
      rows.push_back({{"value", label}, {"acc1", a1}, {"acc5", a5}, {"acc1_mean", s1.mean}, {"acc5_mean", s5.mean}});
    }
    json report{{"axis", axis},
                {"shift", cfg_.prior_shift},
                {"config_hash", config_hash(cfg_)},
                {"seeds", cfg_.ablation.seeds},
                {"rows", rows},
                {"seconds", seconds_since(t0)}};
    write_text(layout_.ablation_dir() / (axis + ".csv"), long_csv.str());
    write_text(layout_.ablation_dir() / (axis + "_table.csv"), table.str());
    data::write_json(layout_.ablation_dir() / (axis + ".json"), report);
    return report;
  }

  // -------------------------------------------------------------------------
  // everything

  json pipeline() const {
    const auto t0 = Clock::now();
    json timings;
    auto timed = [&](const std::string& name, auto&& fn) {
      const auto t = Clock::now();
      fn();
      timings[name] = seconds_since(t);
    };
    json report;
    timed("gen_data", [&] { gen_data(); });
    timed("train", [&] { train("all"); });
    timed("attack", [&] { attack(); });
    timed("evaluate", [&] { report = evaluate(); });
    timings["total"] = seconds_since(t0);
    report["timings"] = timings;
    data::write_json(layout_.report_dir() / "pipeline.json", report);
    return report;
  }

  data::PrivateDataset load_private() const {
    require_file(layout_.private_stem().string() + ".ifgt", "private corpus", "run `ifgmi gen-data` first");
    return data::load_private_dataset(layout_.private_stem());
  }

  models::Classifier<float> load_classifier(models::ClassifierVariant v) const {
    const auto stem = layout_.classifier_stem(models::to_string(v));
    require_file(stem.string() + ".ifgt", models::to_string(v) + " classifier",
                 "run `ifgmi train " + models::to_string(v) + "` first");
    return models::load_classifier<float>(stem, v, cfg_.corpus.identities);
  }

 private:
  void note(const std::string& msg) const {
    if (log_) *log_ << "[ifgmi] " << msg << std::endl;
  }

  json train_classifier(models::ClassifierVariant v) const {
    const auto t0 = Clock::now();
    const auto name = models::to_string(v);
    const auto priv = load_private();
    models::Classifier<float> clf(models::ClassifierConfig::for_variant(v, cfg_.corpus.identities),
                                  seeds_.classifier_init(name));
    models::ClassifierTraining opts;
    opts.epochs = cfg_.train.classifier_epochs;
    const auto rep = models::train_classifier(clf, priv.train, priv.test, opts, seeds_.classifier_train(name));
    json side{{"variant", name},
              {"init_seed", seeds_.classifier_init(name)},
              {"train_seed", seeds_.classifier_train(name)},
              {"epochs", opts.epochs},
              {"train_accuracy", rep.train_accuracy},
              {"test_accuracy", rep.test_accuracy},
              {"epoch_loss", rep.epoch_loss},
              {"usable", rep.usable()},
              {"corpus_checksum", priv.manifest.checksum},
              {"seconds", seconds_since(t0)}};
    models::save_classifier(layout_.classifier_stem(name), clf, side);
    note(name + " classifier: test accuracy " + fmt(rep.test_accuracy) + " (" + fmt(side["seconds"]) + " s)");
    return side;
  }

  json train_prior() const {
    const auto t0 = Clock::now();
    const auto& shift = cfg_.prior_shift;
    const auto stem = layout_.public_stem(shift);
    require_file(stem.string() + ".ifgt", "public corpus '" + shift + "'",
                 "run `ifgmi gen-data` with '" + shift + "' in corpus.shifts");
    const auto pub = data::load_public_dataset(stem);
    models::PriorTraining opts;
    opts.epochs = cfg_.train.prior_epochs;
    opts.batch = cfg_.train.prior_batch;
    models::PriorReport rep;
    const auto prior = models::train_prior<float>(pub.images, {}, {}, opts, seeds_.prior(shift), &rep);
    json side{{"shift", shift},
              {"seed", seeds_.prior(shift)},
              {"epochs", opts.epochs},
              {"steps", rep.steps},
              {"d_loss", rep.d_loss},
              {"g_loss", rep.g_loss},
              {"corpus_checksum", pub.manifest.checksum}};
    // Sample quality in the evaluation model's feature space, when available.
    const auto eval_stem = layout_.classifier_stem("eval");
    if (fs::exists(eval_stem.string() + ".ifgt")) {
      const auto eval = load_classifier(models::ClassifierVariant::evaluation);
      Rng rng(seeds_.fid_latents());
      const auto z = models::sample_latents<float>(cfg_.train.fid_samples, prior.generator.config.z_dim, rng);
      const auto imgs = models::batched(z, 100, [&](const Tensor<float>& zz) { return prior.generator(zz); });
      const auto fg = metrics::to_matrix(models::extract_features(eval, imgs));
      side["fid_public"] = metrics::fid(fg, metrics::to_matrix(models::extract_features(eval, pub.images)));
      side["fid_private"] =
          metrics::fid(fg, metrics::to_matrix(models::extract_features(eval, load_private().train.images)));
      data::write_ppm_grid(layout_.models_dir() / ("prior_" + shift + "_samples.ppm"), data::take(imgs, [] {
                             std::vector<std::size_t> r(32);
                             std::iota(r.begin(), r.end(), 0);
                             return r;
                           }()));
    }
    side["seconds"] = seconds_since(t0);
    models::save_prior(layout_.prior_stem(shift), prior, side);
    note("prior '" + shift + "': " + std::to_string(rep.steps) + " steps (" + fmt(side["seconds"]) + " s)");
    return side;
  }

  json run_method(const Method& m, std::uint64_t s, const models::PriorModels<float>& prior,
                  const models::Classifier<float>& target) const {
    const auto t0 = Clock::now();
    const auto dir = layout_.attack_dir(m.name(), s);
    ensure_writable(dir);
    const auto aseed = seeds_.attack(s);
    const auto classes = cfg_.target_classes();
    const auto& ac = cfg_.attack;

    json result{{"method", m.name()}, {"seed", s}, {"attack_seed", aseed}, {"config", to_json(cfg_)},
                {"config_hash", config_hash(cfg_)}};
    std::vector<Tensor<float>> finals;
    std::vector<int> labels;
    std::size_t failures = 0, violations = 0, audited = 0;
    std::vector<std::vector<Tensor<float>>> stage_images;
    json per_class = json::array();

    for (int c : classes) {
      json cj{{"class", c}};
      Tensor<float> imgs;
      if (m.kind == Method::Kind::ifgmi) {
        const auto cfg = cfg_.attack_for(m.L);
        auto r = attack::optimize_intermediate(prior.generator, target, c, cfg, aseed);
        imgs = r.final_images;
        failures += r.failures();
        violations += r.violations();
        audited += r.audit.size();
        double worst = 0;
        for (const auto& a : r.audit)
          if (a.radius > 0) worst = std::max({worst, a.max_f_l1 / a.radius, a.max_w_l1 / a.radius});
        cj["splits"] = r.splits;
        cj["candidate_scores"] = r.candidate_scores;
        cj["initial_scores"] = r.initial_scores;
        cj["initial_loss"] = r.initial_loss;
        cj["stage_loss"] = r.stage_loss;
        cj["trajectory"] = r.trajectory;
        cj["chosen_stage"] = r.chosen_stage;
        cj["failed"] = r.failed;
        cj["audit"] = {{"entries", r.audit.size()}, {"violations", r.violations()}, {"max_l1_over_radius", worst}};
        if (stage_images.size() < r.snapshots.size()) stage_images.resize(r.snapshots.size());
        for (std::size_t st = 0; st < r.snapshots.size(); ++st) stage_images[st].push_back(r.snapshots[st]);
      } else if (m.kind == Method::Kind::pixel) {
        imgs = attack::baseline_pixel_inversion(target, c, ac.select, ac.pixel_steps, aseed, ac.adam);
      } else {
        imgs = attack::baseline_latent_inversion(prior.generator, target, c, ac.select, ac.latent_steps, ac.lambda,
                                                 aseed, ac.adam, &prior.discriminator);
      }
      if (m.kind != Method::Kind::ifgmi) {
        const auto loss = attack::identity_loss(target, imgs, c);
        std::size_t bad = 0;
        for (double v : loss) bad += !std::isfinite(v);
        failures += bad;
        cj["final_loss"] = loss;
        cj["failures"] = bad;
      }
      finals.push_back(imgs);
      labels.insert(labels.end(), imgs.dim(0), c);
      per_class.push_back(cj);
    }

    AttackArtifacts art{concat_rows(finals), labels};
    save_artifacts(dir, art);
    data::write_ppm_grid(dir / "final.ppm", class_rows(art.images, labels, classes, 8), 8);
    for (std::size_t st = 0; st < stage_images.size(); ++st)
      data::write_ppm_grid(dir / "snapshots" / ("stage_" + std::to_string(st) + ".ppm"),
                           class_rows(concat_rows(stage_images[st]), labels, classes, 8), 8);
    result["classes"] = per_class;
    result["failures"] = failures;
    result["violations"] = violations;
    result["audit_entries"] = audited;
    result["final_checksum"] = checksum({NamedTensor::from("images", art.images)});
    result["seconds"] = seconds_since(t0);
    data::write_json(dir / "result.json", result);
    note(m.name() + " seed " + std::to_string(s) + ": " + std::to_string(art.images.dim(0)) + " images, " +
         std::to_string(failures) + " failed, " + fmt(result["seconds"]) + " s");
    return {{"method", m.name()},        {"seed", s},
            {"dir", dir.string()},       {"failures", failures},
            {"violations", violations},  {"audit_entries", audited},
            {"seconds", result["seconds"]}, {"final_checksum", result["final_checksum"]}};
  }

  ExperimentConfig cfg_;
  Layout layout_;
  Seeds seeds_;
  std::ostream* log_;
};

}  // namespace ifgmi::harness
