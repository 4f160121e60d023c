#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dimask/tensor.hpp"

namespace dimask {

// Checkpoint file layout (all integers and floats little-endian):
//
//   magic    8 bytes   "DIMKCKPT"
//   version  u32       kCheckpointVersion
//   count    u64       number of parameter records
//   record*  count times:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, extents u64 x rank
//     values   f64 x product(extents)
inline constexpr char kCheckpointMagic[8] = {'D', 'I', 'M', 'K', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensor = std::pair<std::string, Tensor>;

std::string encode_parameters(const std::vector<NamedTensor>& params);
std::vector<NamedTensor> decode_parameters(const std::string& bytes);

void save_parameters(const std::string& path, const std::vector<NamedTensor>& params);
std::vector<NamedTensor> load_parameters(const std::string& path);

}  // namespace dimask
