#include "rtn/serialize.hpp"

#include <cstring>
#include <fstream>

namespace rtn {

namespace {

constexpr char kMagic[8] = {'R', 'T', 'N', 'T', 'N', 'S', 'R', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ParseError(path + ": truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in, const std::string& path) {
  const std::uint64_t bits = get_u64(in, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

const Tensor* TensorFile::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, file.step);
  put_u32(out, static_cast<std::uint32_t>(file.meta.size()));
  out.write(file.meta.data(), static_cast<std::streamsize>(file.meta.size()));
  put_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, tensor] : file.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(tensor.dim(i)));
    for (double v : tensor.values()) put_f64(out, v);
  }
  if (!out) throw DataError(path + ": write failed");
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError(path + ": bad magic, not a tensor container");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion) {
    throw ParseError(path + ": unsupported version " + std::to_string(version));
  }
  TensorFile file;
  file.step = get_u64(in, path);
  const std::uint32_t meta_len = get_u32(in, path);
  file.meta.resize(meta_len);
  in.read(file.meta.data(), meta_len);
  if (!in) throw ParseError(path + ": truncated meta");
  const std::uint32_t count = get_u32(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw ParseError(path + ": truncated tensor name");
    const std::uint32_t rank = get_u32(in, path);
    if (rank > 8) throw ParseError(path + ": implausible tensor rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<int>(get_u32(in, path));
      if (shape[r] < 1) throw ParseError(path + ": non-positive dim in tensor " + name);
      numel *= static_cast<std::size_t>(shape[r]);
    }
    std::vector<double> values(numel);
    for (std::size_t v = 0; v < numel; ++v) values[v] = get_f64(in, path);
    file.tensors.emplace_back(std::move(name), Tensor::from_values(std::move(shape), std::move(values)));
  }
  return file;
}

}  // namespace rtn
