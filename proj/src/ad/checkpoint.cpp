#include "pathtext/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "pathtext/errors.hpp"

namespace pathtext::ad {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'K', 'B'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint truncated: " + path);
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is, const std::string& path) {
  const auto len = read_pod<uint64_t>(is, path);
  if (len > (1ull << 32)) throw DataError("checkpoint corrupt (string length): " + path);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("checkpoint truncated: " + path);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);
  const bool f32 = precision() == Precision::f32;
  write_pod<uint8_t>(os, f32 ? 0 : 1);
  write_str(os, ckpt.meta_json);
  write_pod<uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    write_str(os, name);
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_pod<int32_t>(os, d);
    if (f32) {
      std::vector<float> buf(t.data(), t.data() + t.size());
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
  }
  if (!os) throw DataError("cannot write checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw DataError("not a checkpoint file: " + path);
  }
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  const auto dtype = read_pod<uint8_t>(is, path);
  if (dtype > 1) throw DataError("checkpoint corrupt (dtype): " + path);
  Checkpoint ckpt;
  ckpt.meta_json = read_str(is, path);
  const auto count = read_pod<uint64_t>(is, path);
  for (uint64_t k = 0; k < count; ++k) {
    const std::string name = read_str(is, path);
    const auto ndim = read_pod<uint32_t>(is, path);
    if (ndim > 8) throw DataError("checkpoint corrupt (rank): " + path);
    std::vector<int> shape(ndim);
    int64_t n = 1;
    for (auto& d : shape) {
      d = read_pod<int32_t>(is, path);
      if (d < 0) throw DataError("checkpoint corrupt (negative dim): " + path);
      n *= d;
    }
    Tensor t = Tensor::zeros(shape);
    if (dtype == 0) {
      std::vector<float> buf(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!is) throw DataError("checkpoint truncated: " + path);
      for (int64_t i = 0; i < n; ++i) t.data()[i] = static_cast<double>(buf[i]);
    } else {
      is.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(static_cast<size_t>(n) * sizeof(double)));
      if (!is) throw DataError("checkpoint truncated: " + path);
    }
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

}  // namespace pathtext::ad
