#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr {

/// [0, 1] -> 0..255 with round-half-away-from-zero, clamped.
std::uint8_t quantize(float v);
inline float dequantize(std::uint8_t q) { return static_cast<float>(q) / 255.0f; }

/// Binary PPM (P6, maxval 255) of a (1, 3, H, W) frame. Header is
/// "P6\n<W> <H>\n255\n" followed by interleaved RGB bytes.
std::vector<std::uint8_t> encode_ppm(const TensorF& img);
/// Throws ParseError with the byte offset of the failure.
TensorF decode_ppm(std::span<const std::uint8_t> bytes);

void write_ppm(const std::filesystem::path& path, const TensorF& img);
TensorF read_ppm(const std::filesystem::path& path);

}  // namespace vsr
