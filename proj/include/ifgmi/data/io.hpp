#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ifgmi/data/synthetic.hpp"

namespace ifgmi::data {

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"seed", m.seed},
          {"K", m.identities},
          {"n", m.per_identity},
          {"sigma", m.sigma},
          {"image_shape", m.image_shape},
          {"train_size", m.train_size},
          {"test_size", m.test_size},
          {"checksum", m.checksum}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.identities = j.at("K").get<std::size_t>();
  m.per_identity = j.at("n").get<std::size_t>();
  m.sigma = j.at("sigma").get<float>();
  m.image_shape = j.at("image_shape").get<Shape>();
  m.train_size = j.at("train_size").get<std::size_t>();
  m.test_size = j.at("test_size").get<std::size_t>();
  m.checksum = j.at("checksum").get<std::string>();
  return m;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

/// Writes `<stem>.ifgt` and `<stem>.json`.
inline void save_dataset(const std::filesystem::path& stem, const PrivateDataset& ds) {
  save_tensors(stem.string() + ".ifgt", to_tensor_file(ds));
  write_json(stem.string() + ".json", to_json(ds.manifest));
}

inline void save_dataset(const std::filesystem::path& stem, const PublicDataset& ds) {
  save_tensors(stem.string() + ".ifgt", to_tensor_file(ds));
  write_json(stem.string() + ".json", to_json(ds.manifest));
}

inline void verify_checksum(const TensorFile& file, const DatasetManifest& m, const std::string& what) {
  if (checksum(file) != m.checksum)
    throw FormatError(what + ": checksum mismatch (manifest " + m.checksum + ", data " + checksum(file) + ")");
}

inline PrivateDataset load_private_dataset(const std::filesystem::path& stem) {
  PrivateDataset ds;
  ds.manifest = manifest_from_json(read_json(stem.string() + ".json"));
  auto file = load_tensors(stem.string() + ".ifgt");
  verify_checksum(file, ds.manifest, stem.string());
  ds.train.images = find_tensor(file, "train.images").as<float>();
  ds.train.labels = labels_from(find_tensor(file, "train.labels").as<float>());
  ds.test.images = find_tensor(file, "test.images").as<float>();
  ds.test.labels = labels_from(find_tensor(file, "test.labels").as<float>());
  return ds;
}

inline PublicDataset load_public_dataset(const std::filesystem::path& stem) {
  PublicDataset ds;
  ds.manifest = manifest_from_json(read_json(stem.string() + ".json"));
  auto file = load_tensors(stem.string() + ".ifgt");
  verify_checksum(file, ds.manifest, stem.string());
  ds.images = find_tensor(file, "images").as<float>();
  return ds;
}

/// Binary PPM (P6) grid of [N, 3, H, W] images in [-1, 1], `cols` per row.
inline void write_ppm_grid(const std::filesystem::path& path, const Tensor<float>& images, std::size_t cols = 8) {
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  cols = std::max<std::size_t>(1, std::min(cols, n));
  const std::size_t rows = (n + cols - 1) / cols, pad = 1;
  const std::size_t gw = cols * (w + pad) + pad, gh = rows * (h + pad) + pad;
  std::string pix(gw * gh * 3, static_cast<char>(255));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ox = pad + (i % cols) * (w + pad), oy = pad + (i / cols) * (h + pad);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float v = images[((i * 3 + c) * h + y) * w + x];
          const auto byte = static_cast<unsigned char>(std::lround(std::clamp((v + 1.f) * 127.5f, 0.f, 255.f)));
          pix[((oy + y) * gw + ox + x) * 3 + c] = static_cast<char>(byte);
        }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << gw << ' ' << gh << "\n255\n";
  os.write(pix.data(), static_cast<std::streamsize>(pix.size()));
}

}  // namespace ifgmi::data
