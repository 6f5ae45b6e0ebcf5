#pragma once

// 8-bit PNG/JPEG reading and writing. Masks map value/255 <-> [0,1].

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "basnet/core.hpp"

namespace basnet::io {

Image read_image(const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);

/// Decodes PNG/JPEG bytes. Throws CorruptDataError when undecodable.
Image decode_image(std::span<const std::uint8_t> bytes);

/// Quantizes as round(v * 255).
std::uint8_t quantize(double v);

void write_mask_png(const std::filesystem::path& path, const Mask& map);
void write_image_png(const std::filesystem::path& path, const Image& image);
void write_rgba_png(const std::filesystem::path& path, const Image& rgb, const Mask& alpha);

std::vector<std::uint8_t> encode_mask_png(const Mask& map);
std::vector<std::uint8_t> encode_rgba_png(const Image& rgb, const Mask& alpha);

/// Lossless sidecar for metric-sensitive pipelines: a one-line ASCII header
/// "basnet-f64 <height> <width>" followed by little-endian doubles.
void write_mask_f64(const std::filesystem::path& path, const Mask& map);
Mask read_mask_f64(const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

}  // namespace basnet::io
