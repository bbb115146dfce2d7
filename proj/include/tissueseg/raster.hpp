#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace tissueseg {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, Rgb fill = {0, 0, 0});

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  Rgb& at(int x, int y) { return pixels_[index(x, y)]; }
  const Rgb& at(int x, int y) const { return pixels_[index(x, y)]; }
  Rgb& operator[](std::size_t i) { return pixels_[i]; }
  const Rgb& operator[](std::size_t i) const { return pixels_[i]; }

  // Edge-replicating access for coordinates outside the raster.
  const Rgb& clamped(int x, int y) const;

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  const std::vector<Rgb>& pixels() const { return pixels_; }

  bool operator==(const RasterImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Rgb> pixels_;
};

// Integer label raster; labels are 0..num_segments-1, contiguous and
// exhaustive, each label's pixel set 4-connected.
struct SuperpixelMap {
  int width = 0;
  int height = 0;
  int num_segments = 0;
  std::vector<int> labels;

  int at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
  bool operator==(const SuperpixelMap&) const = default;
};

// Per-pixel class raster (B=0, G3=1, G4=2, G5=3).
struct ClassMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> classes;

  std::uint8_t at(int x, int y) const {
    return classes[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x)];
  }
  bool operator==(const ClassMask&) const = default;
};

// Relabels `labels` in first-appearance order so that they cover 0..n-1.
// Returns n.
int compact_labels(std::vector<int>& labels);

// Throws DataError unless labels are contiguous, exhaustive and 4-connected.
void validate_superpixel_map(const SuperpixelMap& sp);

// Pixel indices of each segment, ascending.
std::vector<std::vector<std::size_t>> segment_pixels(const SuperpixelMap& sp);

}  // namespace tissueseg
