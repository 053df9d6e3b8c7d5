#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "exmap/nn.hpp"

namespace exmap::nn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// EXNN layout (all integers little-endian):
///   "EXNN" u16 version
///   u32 input rank, u64 dims...
///   u32 layer count
///   per layer: u8 kind tag, then
///     Dense   : u64 in, u64 out, f64 weight[in*out], f64 bias[out]
///     Conv2d  : u64 out_ch, in_ch, kh, kw, stride, f64 kernel[...], f64 bias[out_ch]
///     AvgPool : u64 window
///     ReLU / Flatten : nothing
std::vector<std::uint8_t> encode_network(const Network& net);
Network decode_network(const std::vector<std::uint8_t>& bytes);

void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);

}  // namespace exmap::nn
