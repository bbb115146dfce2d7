#pragma once

#include <cstddef>
#include <vector>

#include "tissueseg/raster.hpp"

namespace tissueseg {

inline constexpr int kEncoderInputSize = 224;

// Maps a 224x224 RGB patch to a fixed-length descriptor. Implementations
// must be deterministic and safe for concurrent const use.
class PatchEncoder {
 public:
  virtual ~PatchEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> encode(const RasterImage& patch) const = 0;
};

// Handcrafted 64-dim descriptor: per-channel 16-bin histogram fractions (48),
// per-channel mean/255 then std/127.5 (6), and 10 magnitude-weighted gradient
// orientation bins over [0, pi) normalised by pixel count * 255 * sqrt(2).
class DefaultEncoder final : public PatchEncoder {
 public:
  static constexpr std::size_t kDim = 64;
  std::size_t dim() const override { return kDim; }
  std::vector<double> encode(const RasterImage& patch) const override;
};

// Bilinear resampling with half-pixel centres and edge clamping.
RasterImage resize_bilinear(const RasterImage& src, int width, int height);

// Square crop with top-left (x0, y0); out-of-bounds pixels replicate edges.
RasterImage crop_clamped(const RasterImage& img, int x0, int y0, int size);

}  // namespace tissueseg
