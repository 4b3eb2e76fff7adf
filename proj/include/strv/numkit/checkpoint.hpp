#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strv/numkit/tensor.hpp"

namespace strv::numkit {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'R', 'V'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Layout (little-endian):
//   "STRV" | u32 version | u64 entry count |
//   per entry: u32 name length | name bytes | u32 rank | rank x u64 dims |
//              f64 payload (row-major)
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace strv::numkit
