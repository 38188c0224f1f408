#include <gtest/gtest.h>

#include <cstdlib>
#include <unistd.h>
#include <filesystem>

#include "ifgmi/harness/pipeline.hpp"

using namespace ifgmi;
using namespace ifgmi::harness;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.corpus.identities = 3;
  c.corpus.per_identity = 20;
  c.corpus.public_size = 500;
  c.corpus.shifts = {"mild", "strong"};
  c.train.classifier_epochs = 3;
  c.train.prior_epochs = 1;
  c.train.fid_samples = 100;
  c.attack.candidates = 8;
  c.attack.select = 4;
  c.attack.steps = {3, 2, 2, 2};
  c.attack.n_aug = 2;
  c.attack.batch = 2;
  c.attack.pixel_steps = 4;
  c.attack.latent_steps = 3;
  c.methods = {"pixel", "latent", "ifgmi:0", "ifgmi:3"};
  c.metrics.prdc_k = 2;
  c.ablation.seeds = {0, 1};
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ifgmi_harness_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

class HarnessRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("shared"));
    exp_ = new Experiment(tiny_config(), *root_, nullptr);
    exp_->gen_data();
    exp_->train("all");
    exp_->attack();
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete exp_;
    delete root_;
  }
  static fs::path* root_;
  static Experiment* exp_;
};

fs::path* HarnessRun::root_ = nullptr;
Experiment* HarnessRun::exp_ = nullptr;

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, RoundTripsThroughJson) {
  auto c = tiny_config();
  c.attack.final_strategy = attack::FinalStrategy::last;
  c.attack.adam.lr = 0.01;
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
  EXPECT_EQ(config_hash(config_from_json(j)), config_hash(c));
}

TEST(Config, EmptyDocumentGivesDefaults) {
  EXPECT_EQ(to_json(config_from_json(json::object())), to_json(ExperimentConfig{}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(json{{"sead", 3}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"attack", {{"stepz", 1}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"attack", {{"final_strategy", "median"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"seed", "three"}}), ConfigError);
  auto c = tiny_config();
  c.prior_shift = "extreme";
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.classes = {5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.methods = {"ifgmi:3", "ifgmi_L3"};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, HashTracksContent) {
  auto a = tiny_config(), b = tiny_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, MethodNames) {
  EXPECT_EQ(parse_method("pixel", 3).name(), "pixel");
  EXPECT_EQ(parse_method("ifgmi", 2).name(), "ifgmi_L2");
  EXPECT_EQ(parse_method("ifgmi:0", 3).name(), "ifgmi_L0");
  EXPECT_EQ(parse_method("ifgmi_L1", 3).name(), "ifgmi_L1");
  EXPECT_THROW(parse_method("ifgmi:x", 3), ConfigError);
  EXPECT_THROW(parse_method("gmi", 3), ConfigError);
}

TEST(Config, SeedsAreLabelled) {
  Seeds s{7};
  EXPECT_NE(s.classifier_train("target"), s.classifier_train("eval"));
  EXPECT_NE(s.attack(0), s.attack(1));
  EXPECT_EQ(s.corpus(), Seeds{7}.corpus());
  EXPECT_NE(s.corpus(), Seeds{8}.corpus());
}

// ---------------------------------------------------------------------------
// Stages

TEST(GenData, RerunGivesIdenticalChecksumsAndManifests) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  auto cfg = tiny_config();
  const auto ja = Experiment(cfg, a, nullptr).gen_data();
  const auto jb = Experiment(cfg, b, nullptr).gen_data();
  EXPECT_EQ(ja["private"], jb["private"]);
  EXPECT_EQ(ja["public"], jb["public"]);
  EXPECT_EQ(file_checksum(a / "data" / "private.ifgt"), file_checksum(b / "data" / "private.ifgt"));
  EXPECT_TRUE(fs::exists(a / "data" / "public_mild.ifgt"));
  EXPECT_TRUE(fs::exists(a / "data" / "public_strong.ifgt"));
  EXPECT_EQ(ja["private"]["K"], 3);
  EXPECT_EQ(ja["private"]["n"], 20);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Train, MissingCorpusIsNamed) {
  const auto dir = scratch("nocorpus");
  Experiment exp(tiny_config(), dir, nullptr);
  try {
    exp.train("target");
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("private corpus"), std::string::npos);
  }
  EXPECT_THROW(exp.train("generator"), ConfigError);
  fs::remove_all(dir);
}

TEST_F(HarnessRun, SidecarsRecordSeedsAndAccuracy) {
  const auto t = data::read_json(root_->string() + "/models/target.json");
  const auto e = data::read_json(root_->string() + "/models/eval.json");
  const auto p = data::read_json(root_->string() + "/models/prior_mild.json");
  EXPECT_NE(t["train_seed"], e["train_seed"]);
  EXPECT_NE(t["init_seed"], e["init_seed"]);
  EXPECT_GE(t["test_accuracy"].get<double>(), 0.0);
  EXPECT_TRUE(p.contains("fid_public"));
  EXPECT_GE(p["fid_public"].get<double>(), 0.0);
}

TEST_F(HarnessRun, AttackWritesOneDirectoryPerMethod) {
  for (const auto* m : {"pixel", "latent", "ifgmi_L0", "ifgmi_L3"}) {
    const auto dir = exp_->layout().attack_dir(m, 0);
    EXPECT_TRUE(fs::exists(dir / "result.json")) << m;
    EXPECT_TRUE(fs::exists(dir / "final.ppm")) << m;
    const auto art = load_artifacts(dir);
    EXPECT_EQ(art.images.dim(0), 12u);
  }
  const auto dir = exp_->layout().attack_dir("ifgmi_L3", 0);
  for (int s = 0; s < 4; ++s) EXPECT_TRUE(fs::exists(dir / "snapshots" / ("stage_" + std::to_string(s) + ".ppm")));
  const auto r = data::read_json(dir / "result.json");
  EXPECT_EQ(r["violations"], 0);
  EXPECT_GT(r["audit_entries"].get<std::size_t>(), 0u);
  EXPECT_EQ(r["config_hash"], config_hash(exp_->config()));
  EXPECT_EQ(r["classes"].size(), 3u);
  EXPECT_EQ(r["classes"][0]["candidate_scores"].size(), 8u);
}

TEST_F(HarnessRun, RerunIsBitIdentical) {
  auto cfg = tiny_config();
  cfg.methods = {"ifgmi:3", "pixel"};
  const auto dir = scratch("rerun");
  fs::create_directories(dir);
  fs::copy(*root_ / "models", dir / "models", fs::copy_options::recursive);
  const auto a = Experiment(cfg, dir, nullptr).attack();
  const auto first = file_checksum(dir / "attacks" / "ifgmi_L3" / "seed_0" / "final.ifgt");
  const auto b = Experiment(cfg, dir, nullptr).attack();
  EXPECT_EQ(first, file_checksum(dir / "attacks" / "ifgmi_L3" / "seed_0" / "final.ifgt"));
  EXPECT_EQ(a[0]["final_checksum"], b[0]["final_checksum"]);
  EXPECT_EQ(a[1]["final_checksum"], b[1]["final_checksum"]);
  // The shared run used the same seeds, so it matches too.
  EXPECT_EQ(first, file_checksum(*root_ / "attacks" / "ifgmi_L3" / "seed_0" / "final.ifgt"));
  fs::remove_all(dir);
}

TEST_F(HarnessRun, ArchitectureMismatchRejected) {
  const auto dir = scratch("mismatch");
  fs::create_directories(dir / "models");
  fs::copy(*root_ / "models", dir / "models", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  auto side = data::read_json(dir / "models" / "target.json");
  side["architecture"] = "classifier/target-8,8,8-f8-k3";
  data::write_json(dir / "models" / "target.json", side);
  EXPECT_THROW(Experiment(tiny_config(), dir, nullptr).attack(), models::ArchitectureMismatch);
  fs::remove_all(dir);
}

TEST_F(HarnessRun, EvaluateReportShape) {
  const auto report = exp_->evaluate();
  EXPECT_EQ(report["rows"].size(), 4u);  // methods x seeds
  for (const auto& row : report["rows"]) {
    EXPECT_LE(row["acc1"].get<double>(), row["acc5"].get<double>());
    EXPECT_GE(row["fid"].get<double>(), 0.0);
    EXPECT_LE(row["precision"].get<double>(), 1.0);
  }
  const auto echoed = data::read_json(exp_->layout().config());
  EXPECT_EQ(report["config_hash"], config_hash(config_from_json(echoed)));
  EXPECT_TRUE(fs::exists(exp_->layout().report_dir() / "report.csv"));
  EXPECT_TRUE(fs::exists(exp_->layout().report_dir() / "comparison_ifgmi_L3_seed0.ppm"));
  std::ifstream csv(exp_->layout().report_dir() / "report.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 5u);
}

TEST_F(HarnessRun, PrivateSetAgainstItself) {
  const auto priv = exp_->load_private();
  const auto eval = exp_->load_classifier(models::ClassifierVariant::evaluation);
  const auto indep = exp_->load_classifier(models::ClassifierVariant::independent);
  const auto fe = metrics::to_matrix(models::extract_features(eval, priv.train.images));
  const auto fi = metrics::to_matrix(models::extract_features(indep, priv.train.images));
  const auto row = exp_->evaluate_images({priv.train.images, priv.train.labels}, priv, eval, indep, fe, fi);
  EXPECT_EQ(row["delta_eval"].get<double>(), 0.0);
  EXPECT_EQ(row["delta_indep"].get<double>(), 0.0);
  EXPECT_NEAR(row["acc1"].get<double>(), models::accuracy(eval, priv.train), 1e-12);
}

TEST_F(HarnessRun, AblationSweeps) {
  const auto l = exp_->ablate("L");
  ASSERT_EQ(l["rows"].size(), 4u);
  for (const auto& row : l["rows"]) EXPECT_EQ(row["acc1"].size(), 2u);

  const auto r = exp_->ablate("radii");
  ASSERT_EQ(r["rows"].size(), 4u);
  EXPECT_EQ(r["rows"][0]["value"], "0");
  // A zero radius pins every intermediate stage to its anchor.
  const double zero = r["rows"][0]["acc1_mean"], l0 = l["rows"][0]["acc1_mean"];
  EXPECT_NEAR(zero, l0, 1.0 / 12);

  const auto d = exp_->ablate("decomposition");
  ASSERT_EQ(d["rows"].size(), 5u);
  EXPECT_EQ(d["rows"][0]["value"], "none");
  EXPECT_EQ(d["rows"][0]["acc1"], l["rows"][0]["acc1"]);
  EXPECT_TRUE(fs::exists(exp_->layout().ablation_dir() / "L_table.csv"));
  EXPECT_THROW(exp_->ablate("depth"), ConfigError);
}

TEST_F(HarnessRun, MissingPriorIsNamed) {
  const auto dir = scratch("noprior");
  try {
    Experiment(tiny_config(), dir, nullptr).attack();
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("prior checkpoint"), std::string::npos);
  }
  fs::remove_all(dir);
}
