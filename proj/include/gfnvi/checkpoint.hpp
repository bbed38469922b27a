#pragma once

// Parameter checkpoints.
//
// Binary layout, all integers and floats little-endian:
//
//   offset  size  field
//   0       8     magic "GFNVICKP"
//   8       4     u32 format version (1)
//   12      4     u32 number of network specs N
//   16      8     u64 RNG seed
//   24      8     u64 optimizer step count
//   32      8     u64 parameter count P
//   40      64    4 x (u64 offset, u64 size) for slices phi, theta, psi, xi
//   104     ...   N network records:
//                   u32 name length L, L bytes of name,
//                   u32 inputDim, u32 outputDim, u32 activation (0 tanh, 1 leaky_relu),
//                   u32 hidden count H, H x u32 widths, f64 init scale
//   ...     8P    f64 parameter values

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfnvi/nnet.hpp"

namespace gfnvi {

struct NamedSpec {
  std::string name;
  MlpSpec spec;
};

struct Checkpoint {
  Layout layout;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<NamedSpec> nets;
  std::vector<double> values;
};

std::vector<std::uint8_t> encodeCheckpoint(const Checkpoint& ckpt);
Checkpoint decodeCheckpoint(const std::vector<std::uint8_t>& bytes);

void writeCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint readCheckpoint(const std::filesystem::path& path);

nlohmann::json checkpointToJson(const Checkpoint& ckpt);

}  // namespace gfnvi
