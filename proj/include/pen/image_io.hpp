#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pen/data.hpp"
#include "pen/tensor.hpp"

namespace pen::io {

// 8/16-bit gray or color file -> float RGB in [0,1].
data::Image read_image(const std::filesystem::path& path);

// Single-channel 16-bit PNG instance mask, 0 = background.
annotation::InstanceMask read_mask_png(const std::filesystem::path& path);

void write_image_png(const std::filesystem::path& path, const data::Image& img);
void write_mask_png16(const std::filesystem::path& path,
                      const annotation::InstanceMask& mask);

// Interleaved 8-bit RGB buffer (H*W*3), used by the panel renderer.
void write_rgb_png(const std::filesystem::path& path, int height, int width,
                   const std::vector<uint8_t>& rgb);

}  // namespace pen::io
