#pragma once

// IFGT tensor container:
//   magic "IFGT" | u32 version | u32 count
//   per tensor: u32 name length | UTF-8 name | u8 dtype (0=f32, 1=f64)
//               | u32 rank | u64 dims[rank] | raw little-endian values

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ifgmi/core/rng.hpp"
#include "ifgmi/core/tensor.hpp"

namespace ifgmi {

static_assert(std::endian::native == std::endian::little, "IFGT I/O assumes a little-endian host");

inline constexpr std::uint32_t kTensorFileVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct NamedTensor {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> values;

  Dtype dtype() const { return values.index() == 0 ? Dtype::f32 : Dtype::f64; }

  template <class T>
  static NamedTensor from(std::string name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return NamedTensor{std::move(name), t.shape(), std::vector<T>(t.data().begin(), t.data().end())};
  }

  /// Converts to the requested precision.
  template <class T>
  Tensor<T> as() const {
    return std::visit([&](const auto& v) { return Tensor<T>(shape, std::vector<T>(v.begin(), v.end())); },
                      values);
  }
};

using TensorFile = std::vector<NamedTensor>;

namespace detail {

template <class V>
void put(std::string& buf, V v) {
  char raw[sizeof(V)];
  std::memcpy(raw, &v, sizeof(V));
  buf.append(raw, sizeof(V));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  template <class V>
  V get() {
    V v;
    need(sizeof(V));
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("IFGT: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_tensors(const TensorFile& file) {
  std::string buf = "IFGT";
  detail::put<std::uint32_t>(buf, kTensorFileVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(file.size()));
  for (const auto& t : file) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.dtype()));
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put<std::uint64_t>(buf, d);
    std::visit(
        [&](const auto& v) {
          if (v.size() != numel(t.shape)) throw FormatError("IFGT: '" + t.name + "' size/shape mismatch");
          buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0]));
        },
        t.values);
  }
  return buf;
}

inline TensorFile decode_tensors(const std::string& buf) {
  detail::Reader r(buf);
  if (r.bytes(4) != "IFGT") throw FormatError("IFGT: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion) throw FormatError("IFGT: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  TensorFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    const auto code = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t n = numel(t.shape);
    if (code == 0) {
      std::vector<float> v(n);
      auto raw = r.bytes(n * sizeof(float));
      std::memcpy(v.data(), raw.data(), raw.size());
      t.values = std::move(v);
    } else if (code == 1) {
      std::vector<double> v(n);
      auto raw = r.bytes(n * sizeof(double));
      std::memcpy(v.data(), raw.data(), raw.size());
      t.values = std::move(v);
    } else {
      throw FormatError("IFGT: unknown dtype code " + std::to_string(code) + " for '" + t.name + "'");
    }
    file.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("IFGT: trailing bytes");
  return file;
}

inline void save_tensors(const std::filesystem::path& path, const TensorFile& file) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const auto buf = encode_tensors(file);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline TensorFile load_tensors(const std::filesystem::path& path) { return decode_tensors(read_file(path)); }

inline const NamedTensor& find_tensor(const TensorFile& file, const std::string& name) {
  for (const auto& t : file)
    if (t.name == name) return t;
  throw FormatError("IFGT: no tensor named '" + name + "'");
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// FNV-1a digest of the encoded container.
inline std::string checksum(const TensorFile& file) { return hex64(fnv1a64(encode_tensors(file))); }

inline std::string file_checksum(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

}  // namespace ifgmi
