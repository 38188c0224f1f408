#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ifgmi/data/io.hpp"
#include "ifgmi/metrics/metrics.hpp"
#include "ifgmi/models/training.hpp"

using namespace ifgmi;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "ifgmi_test_data" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST(Render, SameSpecAndSeedIsBitIdentical) {
  auto spec = data::identity_spec(3, 7);
  auto a = data::render_identity_image(spec, 11), b = data::render_identity_image(spec, 11);
  ASSERT_EQ(a.size(), data::kPixels);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Render, SampleSeedsVaryNuisance) {
  auto spec = data::identity_spec(3, 7);
  auto a = data::render_identity_image(spec, 11), b = data::render_identity_image(spec, 12);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 1.0);
}

TEST(Render, PixelsStayInRange) {
  for (float sigma : {0.f, 0.5f, 1.f})
    for (std::uint64_t id = 0; id < 20; ++id) {
      auto img = data::render_identity_image(data::identity_spec(1, id), id, data::ShiftConfig{sigma});
      for (float v : img.data()) {
        ASSERT_GE(v, -1.f);
        ASSERT_LE(v, 1.f);
      }
    }
}

TEST(Render, IdentitySpecsAreDeterministicAndDistinct) {
  std::set<std::vector<float>> seen;
  for (std::uint64_t id = 0; id < 200; ++id) {
    auto p = data::identity_spec(5, id).parameters();
    EXPECT_EQ(p, data::identity_spec(5, id).parameters());
    EXPECT_TRUE(seen.insert(p).second) << "id " << id;
  }
}

TEST(Render, HueRotationByZeroIsIdentity) {
  data::Rgb c{0.2f, 0.5f, 0.7f};
  auto r = data::rotate_hue(c, 0.f);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r[i], c[i], 1e-6);
}

TEST(PrivateDataset, SplitArithmeticAndLabels) {
  auto ds = data::make_private_dataset(1, 10, 50);
  EXPECT_EQ(ds.train.size(), 400u);
  EXPECT_EQ(ds.test.size(), 100u);
  EXPECT_EQ(ds.train.images.shape(), (Shape{400, 3, 32, 32}));
  std::set<int> tr(ds.train.labels.begin(), ds.train.labels.end()), te(ds.test.labels.begin(), ds.test.labels.end());
  EXPECT_EQ(tr.size(), 10u);
  EXPECT_EQ(te.size(), 10u);
  EXPECT_EQ(*tr.begin(), 0);
  EXPECT_EQ(*tr.rbegin(), 9);
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(std::count(ds.train.labels.begin(), ds.train.labels.end(), k), 40);
    EXPECT_EQ(std::count(ds.test.labels.begin(), ds.test.labels.end(), k), 10);
  }
}

TEST(PrivateDataset, ChecksumIsStable) {
  auto a = data::make_private_dataset(4, 3, 20), b = data::make_private_dataset(4, 3, 20);
  EXPECT_EQ(a.manifest.checksum, b.manifest.checksum);
  EXPECT_NE(a.manifest.checksum, data::make_private_dataset(5, 3, 20).manifest.checksum);
}

TEST(PrivateDataset, RejectsTooFewSamplesOrIdentities) {
  EXPECT_THROW(data::make_private_dataset(1, 10, 19), std::invalid_argument);
  EXPECT_THROW(data::make_private_dataset(1, 1, 50), std::invalid_argument);
}

TEST(PublicDataset, SizeAndShift) {
  EXPECT_THROW(data::make_public_dataset(1, 499, data::ShiftConfig::none()), std::invalid_argument);
  auto pub = data::make_public_dataset(1, 500, data::ShiftConfig::mild());
  EXPECT_EQ(pub.images.dim(0), 500u);
  EXPECT_FLOAT_EQ(pub.manifest.sigma, 0.35f);
}

TEST(PublicDataset, IdentitiesDisjointFromPrivate) {
  // Public identity i renders from spec id kPublicIdBase + i; no private
  // corpus with fewer identities than that can share an id.
  auto ds = data::make_private_dataset(1, 10, 20);
  auto pub = data::make_public_dataset(1, 500, data::ShiftConfig::none());
  auto first = data::render_identity_image(data::identity_spec(1, data::kPublicIdBase),
                                           derive_seed(1, "public-sample", 0));
  for (std::size_t i = 0; i < data::kPixels; ++i) ASSERT_EQ(pub.images[i], first[i]);
  std::set<std::vector<float>> priv;
  for (std::uint64_t k = 0; k < 10; ++k) priv.insert(data::identity_spec(1, k).parameters());
  for (std::uint64_t i = 0; i < 500; ++i)
    EXPECT_FALSE(priv.count(data::identity_spec(1, data::kPublicIdBase + i).parameters()));
}

TEST(DatasetIo, RoundTripAndChecksumVerification) {
  auto dir = scratch("io");
  auto ds = data::make_private_dataset(2, 3, 20);
  data::save_dataset(dir / "private", ds);
  auto back = data::load_private_dataset(dir / "private");
  EXPECT_EQ(back.manifest.checksum, ds.manifest.checksum);
  EXPECT_EQ(back.manifest.identities, 3u);
  EXPECT_EQ(back.train.labels, ds.train.labels);
  for (std::size_t i = 0; i < ds.train.images.size(); ++i) ASSERT_EQ(back.train.images[i], ds.train.images[i]);

  auto j = data::read_json(dir / "private.json");
  j["checksum"] = "0000000000000000";
  data::write_json(dir / "private.json", j);
  EXPECT_THROW(data::load_private_dataset(dir / "private"), FormatError);
}

TEST(DatasetIo, PpmGridHeader) {
  auto dir = scratch("ppm");
  Tensor<float> imgs(Shape{10, 3, 32, 32}, -1.f);
  data::write_ppm_grid(dir / "g.ppm", imgs, 8);
  std::ifstream is(dir / "g.ppm", std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  is >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 8u * 33 + 1);
  EXPECT_EQ(h, 2u * 33 + 1);
  EXPECT_EQ(maxv, 255u);
  EXPECT_EQ(fs::file_size(dir / "g.ppm"), static_cast<std::uintmax_t>(is.tellg()) + 1 + w * h * 3);
}

// The palette/texture knob must move the public corpus away from the private
// renderer distribution in the feature space of a classifier trained on the
// private data.
TEST(Shift, FeatureFidGrowsWithSigma) {
  auto ds = data::make_private_dataset(1, 10, 50);
  models::Classifier<float> clf(models::ClassifierConfig::for_variant(models::ClassifierVariant::evaluation, 10), 3);
  models::ClassifierTraining opts;
  opts.epochs = 10;
  models::train_classifier(clf, ds.train, ds.test, opts, 4);
  // Reference: fresh identities from the unshifted (private) renderer.
  auto ref = data::make_public_dataset(9, 600, data::ShiftConfig::none());
  auto priv = metrics::to_matrix(models::extract_features(clf, ref.images));
  std::vector<double> fid;
  for (float sigma : {0.f, 0.5f, 1.f}) {
    auto pub = data::make_public_dataset(2, 600, data::ShiftConfig{sigma});
    fid.push_back(metrics::fid(metrics::to_matrix(models::extract_features(clf, pub.images)), priv));
  }
  EXPECT_LT(fid[0], fid[1]);
  EXPECT_LT(fid[1], fid[2]);
  EXPECT_LT(fid[0], 0.25 * fid[2]) << fid[0] << " vs " << fid[2];
}
