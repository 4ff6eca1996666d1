#pragma once

#include <map>
#include <string>

#include "flowsg/numkit/array.hpp"

namespace flowsg::numkit {

using TensorMap = std::map<std::string, Array>;

// Binary layout, little-endian throughout:
//   bytes 0..3   magic "GFLW"
//   u32          format version (currently 1)
//   u32          tensor count
//   per tensor:  u32 name length, name bytes (UTF-8),
//                u32 rank, u64 dims[rank], f64 data row-major
void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

}  // namespace flowsg::numkit
