#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tissueseg/raster.hpp"

namespace tissueseg {

// Reads an 8-bit RGB image. PNG (any bit depth / color type libpng can
// reduce to RGB8) or binary/ASCII PPM, selected by content signature.
RasterImage read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RasterImage& img);
void write_ppm(const std::filesystem::path& path, const RasterImage& img);

// RGBA overlay output.
void write_png_rgba(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& rgba);

// 8-bit single-channel class-index mask.
ClassMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const ClassMask& mask);

// Superpixel maps: 16-bit single-channel PNG plus a `<path>.txt` sidecar
// holding "num_segments <n>".
void write_superpixel_map(const std::filesystem::path& path, const SuperpixelMap& sp);
SuperpixelMap read_superpixel_map(const std::filesystem::path& path);

// Writes to a temporary sibling then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace tissueseg
