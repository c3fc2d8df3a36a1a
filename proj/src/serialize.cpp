#include "campd/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace campd {

namespace {

constexpr char kMagic[] = "CAMPDW1";
constexpr size_t kMagicLen = 7;
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw TensorError("weight container: truncated u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw TensorError("weight container: truncated u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_weights(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kMagic, kMagicLen);
  put_u32(os, kVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
    auto v = t.values();
    for (double x : v) {
      uint64_t bits;
      std::memcpy(&bits, &x, sizeof(bits));
      put_u64(os, bits);
    }
  }
  if (!os) throw TensorError("weight container: write failed");
}

std::vector<NamedTensor> load_weights(std::istream& is) {
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw TensorError("weight container: bad magic");
  const uint32_t version = get_u32(is);
  if (version != kVersion)
    throw TensorError("weight container: unsupported version " +
                      std::to_string(version));
  std::vector<NamedTensor> out;
  while (true) {
    int c = is.peek();
    if (c == std::char_traits<char>::eof()) break;
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw TensorError("weight container: truncated name");
    const uint32_t rank = get_u32(is);
    if (rank > 8) throw TensorError("weight container: implausible rank");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i)
      shape.push_back(static_cast<int>(get_u64(is)));
    std::vector<double> vals(static_cast<size_t>(numel(shape)));
    for (double& x : vals) {
      uint64_t bits = get_u64(is);
      std::memcpy(&x, &bits, sizeof(bits));
    }
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(vals)));
  }
  return out;
}

void save_weights_file(const std::string& path,
                       const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open for writing: " + path);
  save_weights(f, tensors);
}

std::vector<NamedTensor> load_weights_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open: " + path);
  return load_weights(f);
}

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<NamedTensor>& tensors) {
  if (config_json.find('\n') != std::string::npos)
    throw TensorError("checkpoint: config JSON must be a single line");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open for writing: " + path);
  f << config_json << '\n';
  save_weights(f, tensors);
}

std::pair<std::string, std::vector<NamedTensor>> load_checkpoint(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open: " + path);
  std::string config_json;
  if (!std::getline(f, config_json))
    throw TensorError("checkpoint: missing config header");
  return {config_json, load_weights(f)};
}

}  // namespace campd
