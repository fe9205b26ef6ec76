#ifndef RTN_SERIALIZE_HPP_
#define RTN_SERIALIZE_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rtn/tensor.hpp"

namespace rtn {

// Flat binary container of named tensors, explicitly little-endian:
//   magic "RTNTNSR1", u32 version, u64 step, u32 meta length + bytes,
//   u32 tensor count, then per tensor u32 name length + bytes, u32 rank,
//   u32 dims[rank], IEEE-754 binary64 values.
// Checkpoints store the parameter tensors plus the config snapshot in
// `meta`; ground-truth bundles reuse the same container with step 0.
struct TensorFile {
  std::uint64_t step = 0;
  std::string meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

}  // namespace rtn

#endif  // RTN_SERIALIZE_HPP_
