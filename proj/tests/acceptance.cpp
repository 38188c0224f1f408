// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>

#include "gradcheck.hpp"
#include "ifgmi/harness/pipeline.hpp"
#include "oracles.hpp"
#include "primitive_cases.hpp"

using namespace ifgmi;
using harness::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
  outcomes.push_back({id, pass, detail});
  std::printf("CRITERION %2d %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// 1 ------------------------------------------------------------------------
void gradient_suite() {
  const auto t0 = harness::Clock::now();
  Rng rng(20240601);
  auto cases = ifgmi::testing::primitive_cases();
  ifgmi::testing::PrimitiveCase poincare{
      "poincare_loss",
      [](Rng& r) { return std::vector<Tensor<double>>{ifgmi::testing::randn({4, 6}, r, 2.0)}; },
      [](const std::vector<Tensor<double>>& in) {
        const std::size_t n = in[0].dim(0);
        std::vector<int> cls(n);
        for (std::size_t i = 0; i < n; ++i) cls[i] = static_cast<int>((i * 3) % in[0].dim(1));
        return attack::poincare_loss_rows(in[0], cls);
      }};
  cases.push_back(poincare);
  double worst = 0;
  std::string worst_name;
  for (const auto& pc : cases)
    for (int inst = 0; inst < 20; ++inst) {
      const auto res = ifgmi::testing::gradcheck(pc.fn, pc.make_inputs(rng), rng, 1e-4);
      if (res.max_rel_error > worst || !std::isfinite(res.max_rel_error)) {
        worst = res.max_rel_error;
        worst_name = pc.name;
      }
    }
  const double secs = harness::seconds_since(t0);
  report(1, worst < 1e-5 && secs < 30,
         std::to_string(cases.size()) + " primitives x 20 instances, worst rel err " + num(worst) + " (" + worst_name +
             "), " + num(secs, 3) + " s");
}

// 2 ------------------------------------------------------------------------
void projection_oracle() {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ur(0.05, 3.0);
  double worst = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 2 + static_cast<std::size_t>(inst) % 63;
    std::vector<double> x(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = 2 * nd(gen);
      c[i] = 0.5 * nd(gen);
    }
    const double r = ur(gen) * std::sqrt(double(n));
    auto ours = x;
    attack::project_l1_ball<double>(ours, c, r);
    const auto oracle = ifgmi::testing::dense_theta_projection(x, c, r);
    double d = 0;
    for (std::size_t i = 0; i < n; ++i) d += (ours[i] - oracle[i]) * (ours[i] - oracle[i]);
    worst = std::max(worst, std::sqrt(d));
  }
  std::vector<double> a{3, 0}, b{2, 1}, z{0, 0};
  attack::project_l1_ball<double>(a, z, 1.0);
  attack::project_l1_ball<double>(b, z, 1.0);
  const bool exact = a == std::vector<double>{1, 0} && b == std::vector<double>{1, 0};
  report(2, worst < 1e-6 && exact,
         "1000 instances (dims 2-64), worst distance to oracle " + num(worst) + "; hand cases " +
             (exact ? "exact" : "WRONG"));
}

// 3 ------------------------------------------------------------------------
void compositionality() {
  models::Generator<float> g({}, 3);
  Rng rng(4);
  const auto w = g.map(models::sample_latents<float>(100, g.config.z_dim, rng));
  const auto full = g.synthesis.full(w);
  double worst = 0;
  for (std::size_t i = 0; i <= g.synthesis.image_index(); ++i) {
    const auto f = i == g.synthesis.image_index() ? full : g.synthesis.prefix(w, i);
    const auto out = g.synthesis.suffix(f, w, i);
    for (std::size_t k = 0; k < full.size(); ++k) worst = std::max(worst, double(std::abs(out[k] - full[k])));
  }
  report(3, worst <= 1e-5,
         "100 w, splits 0.." + std::to_string(g.synthesis.image_index()) + ", max abs diff " + num(worst));
}

// 4 ------------------------------------------------------------------------
void fid_oracle() {
  using metrics::Matrix;
  using metrics::Vector;
  const int d = 8;
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  auto sample = [&](std::size_t n, const Vector& mu) {
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) x(i, j) = mu(j) + nd(gen);
    return x;
  };
  const Vector shift = Vector::LinSpaced(d, 0.2, 1.0);
  const Matrix a = sample(5000, Vector::Zero(d)), b = sample(5000, shift);
  const double expected = shift.squaredNorm(), got = metrics::fid(a, b);
  const double rel = std::abs(got - expected) / expected;
  const double self = metrics::fid(a, a), asym = std::abs(metrics::fid(a, b) - metrics::fid(b, a));
  report(4, rel < 0.05 && self < 1e-6 && asym < 1e-6,
         "closed form " + num(expected) + " vs " + num(got) + " (rel " + num(rel) + "), fid(A,A) " + num(self) +
             ", asymmetry " + num(asym));
}

// 5 ------------------------------------------------------------------------
void prdc_sanity() {
  using metrics::Matrix;
  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd;
  Matrix x(50, 4), far(50, 4);
  for (auto& v : x.reshaped()) v = nd(gen);
  for (auto& v : far.reshaped()) v = 1000 + nd(gen);
  const auto same = metrics::prdc(x, x, 3), apart = metrics::prdc(x, far, 3);
  const bool ok_same = same.precision == 1 && same.recall == 1 && same.coverage == 1;
  const bool ok_apart = apart.precision == 0 && apart.coverage == 0;

  // Six points in 2-D, k = 2, against an exhaustive evaluation.
  Matrix real(3, 2), fake(3, 2);
  real << 0, 0, 1, 0, 0, 2;
  fake << 0.4, 0.3, 3, 3, 0.9, 1.1;
  const std::size_t k = 2;
  auto radius = [&](const Matrix& m, int i) {
    std::vector<double> ds;
    for (int j = 0; j < m.rows(); ++j)
      if (j != i) ds.push_back((m.row(i) - m.row(j)).norm());
    std::sort(ds.begin(), ds.end());
    return ds[k - 1];
  };
  double prec = 0, rec = 0, dens = 0, cov = 0;
  for (int j = 0; j < 3; ++j) {
    int inside = 0;
    for (int i = 0; i < 3; ++i) inside += (real.row(i) - fake.row(j)).norm() <= radius(real, i);
    prec += inside > 0;
    dens += inside;
  }
  for (int i = 0; i < 3; ++i) {
    bool c = false, r = false;
    for (int j = 0; j < 3; ++j) {
      const double dist = (real.row(i) - fake.row(j)).norm();
      c = c || dist <= radius(real, i);
      r = r || dist <= radius(fake, j);
    }
    cov += c;
    rec += r;
  }
  const auto hand = metrics::prdc(real, fake, k);
  const bool ok_hand = hand.precision == prec / 3 && hand.recall == rec / 3 && hand.density == dens / (k * 3) &&
                       hand.coverage == cov / 3;
  report(5, ok_same && ok_apart && ok_hand,
         std::string("identical sets ") + (ok_same ? "1/1/1" : "WRONG") + ", separated sets " +
             (ok_apart ? "0/0" : "WRONG") + ", 6-point instance " + (ok_hand ? "matches" : "MISMATCH"));
}

harness::ExperimentConfig with_threads(harness::ExperimentConfig c, std::size_t threads) {
  c.threads = threads;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work = "acceptance_run";
  std::size_t threads = 1;
  bool quiet = false;
  app.add_option("--work", work, "scratch directory for the end-to-end runs")->capture_default_str();
  app.add_option("--threads", threads, "attack worker threads for the budget run")->capture_default_str();
  app.add_flag("--quiet", quiet, "suppress stage progress");
  CLI11_PARSE(app, argc, argv);
  std::ostream* log = quiet ? nullptr : &std::cerr;

  gradient_suite();
  projection_oracle();
  compositionality();
  fid_oracle();
  prdc_sanity();

  const fs::path root = fs::absolute(work);
  fs::remove_all(root);
  json measured;
  try {
    // Default pipeline (mild shift): criteria 6, 9, 11.
    const harness::Experiment mild(with_threads({}, threads), root / "mild", log);
    const auto pipe = mild.pipeline();
    const auto timings = pipe["timings"];
    const auto target = data::read_json(mild.layout().classifier_stem("target").string() + ".json");
    double acc_l3 = -1;
    for (const auto& row : pipe["rows"])
      if (row["method"] == "ifgmi_L3") acc_l3 = row["acc1"];
    const double tacc = target["test_accuracy"];
    measured["mild"] = pipe;
    report(6, tacc >= 0.90 && acc_l3 >= 0.5,
           "target test accuracy " + num(tacc) + " (>= 0.90), ifgmi L=3 eval Acc@1 " + num(acc_l3) + " (>= 0.5)");

    // Strong shift: same private data and classifiers, new public corpus and prior.
    auto strong_cfg = with_threads({}, threads);
    strong_cfg.corpus.shifts = {"strong"};
    strong_cfg.prior_shift = "strong";
    const harness::Experiment strong(strong_cfg, root / "strong", log);
    strong.gen_data();
    fs::copy(root / "mild" / "models", root / "strong" / "models", fs::copy_options::recursive);
    strong.train("prior");
    const auto sweep = strong.ablate("L");
    measured["strong_L_sweep"] = sweep;
    std::vector<std::vector<double>> acc;
    std::vector<double> means;
    for (const auto& row : sweep["rows"]) {
      acc.push_back(row["acc1"].get<std::vector<double>>());
      means.push_back(row["acc1_mean"]);
    }
    std::size_t wins = 0;
    for (std::size_t s = 0; s < acc[3].size(); ++s) wins += acc[3][s] > acc[0][s];
    report(7, acc[3].size() >= 5 && means[3] > means[0] && wins >= 4,
           "strong shift, " + std::to_string(acc[3].size()) + " seeds: mean Acc@1 L=3 " + num(means[3]) + " vs L=0 " +
               num(means[0]) + ", L=3 ahead on " + std::to_string(wins) + "/" + std::to_string(acc[3].size()) +
               " seeds");
    const auto best = static_cast<std::size_t>(std::max_element(means.begin(), means.end()) - means.begin());
    std::string curve;
    for (std::size_t l = 0; l < means.size(); ++l) curve += (l ? ", " : "") + num(means[l]);
    report(8, best >= 1, "mean Acc@1 over L=0..3: [" + curve + "], argmax L=" + std::to_string(best));

    // Constraint audit over the full default attack run.
    const auto result = data::read_json(mild.layout().attack_dir("ifgmi_L3", 0) / "result.json");
    double worst = 0;
    for (const auto& c : result["classes"]) worst = std::max(worst, c["audit"]["max_l1_over_radius"].get<double>());
    const std::size_t entries = result["audit_entries"], violations = result["violations"];
    report(9, entries > 0 && violations == 0 && worst <= 1 + 1e-6,
           std::to_string(entries) + " logged post-step states, " + std::to_string(violations) +
               " violations, worst ||.||_1 / r = " + num(worst, 10));

    // Determinism: a second single-threaded attack with the same config and seed.
    const fs::path again = root / "rerun";
    fs::create_directories(again);
    fs::copy(root / "mild" / "models", again / "models", fs::copy_options::recursive);
    const harness::Experiment rerun(with_threads({}, 1), again, log);
    const auto second = rerun.attack();
    bool identical = true;
    std::string sums;
    for (const auto& m : second) {
      const auto first = data::read_json(mild.layout().attack_dir(m["method"], 0) / "result.json");
      const bool same = threads == 1 && first["final_checksum"] == m["final_checksum"];
      identical = identical && same;
      sums += (sums.empty() ? "" : ", ") + m["method"].get<std::string>() + (same ? " identical" : " DIFFERENT");
    }
    report(10, identical, sums + (threads == 1 ? "" : " (first run was multi-threaded)"));

    const double total = timings["total"], atk = timings["attack"];
    report(11, total < 1800 && atk < 600,
           "default pipeline " + num(total, 4) + " s (< 1800), attack stage " + num(atk, 4) + " s (< 600), " +
               std::to_string(threads) + " thread(s)");
  } catch (const std::exception& e) {
    std::cerr << "end-to-end stage failed: " << e.what() << '\n';
    for (int id = 6; id <= 11; ++id) {
      const bool seen = std::any_of(outcomes.begin(), outcomes.end(), [&](const Outcome& o) { return o.id == id; });
      if (!seen) report(id, false, std::string("not reached: ") + e.what());
    }
  }

  json summary = json::array();
  for (const auto& o : outcomes) summary.push_back({{"criterion", o.id}, {"pass", o.pass}, {"detail", o.detail}});
  measured["criteria"] = summary;
  fs::create_directories(root);
  data::write_json(root / "acceptance.json", measured);
  const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return !o.pass; });
  std::printf("%zu/%zu criteria passed\n", outcomes.size() - static_cast<std::size_t>(failed), outcomes.size());
  return failed ? 1 : 0;
}
