#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>

#include "tissueseg/raster.hpp"

namespace tissueseg {

// Per-channel reference statistics for stain normalization.
struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

ChannelStats channel_stats(const RasterImage& img);

// Pluggable stain normalizer.
class StainNormalizer {
 public:
  virtual ~StainNormalizer() = default;
  virtual RasterImage normalize(const RasterImage& img) const = 0;
};

// Matches per-channel mean/std to a reference, clamped to [0,255].
class ChannelStatsNormalizer final : public StainNormalizer {
 public:
  explicit ChannelStatsNormalizer(ChannelStats ref);
  RasterImage normalize(const RasterImage& img) const override;

 private:
  ChannelStats ref_;
};

RasterImage normalize_stain(const RasterImage& img, const ChannelStats& ref);

struct SlicParams {
  int n_segments = 100;
  double compactness = 10.0;
  int iters = 10;
  // Fragments smaller than this fraction of the expected segment area are
  // absorbed into their largest 4-neighbour.
  double min_fragment_fraction = 0.25;
};

SuperpixelMap slic(const RasterImage& img, const SlicParams& params);

// 39 values: for R, G, B in order, 8 histogram fractions (bins of width 32),
// mean, population std, lower median, energy, skewness.
inline constexpr std::size_t kColorFeatureDim = 39;
using ColorFeatureVector = std::array<double, kColorFeatureDim>;

ColorFeatureVector region_color_features(const RasterImage& img,
                                         std::span<const std::size_t> region);

// Rescales a feature vector for merge comparisons: histogram and energy
// as-is, mean/std/median divided by 255, skewness clamped to [-3,3] and
// divided by 3.
ColorFeatureVector merge_scaled(const ColorFeatureVector& f);

double color_feature_distance(const ColorFeatureVector& a, const ColorFeatureVector& b);

struct MergeParams {
  double sim_threshold = 0.5;
  // Merging stops once the segment count is at or below this value.
  int target_max_nodes = 1;
};

SuperpixelMap hierarchical_merge(const RasterImage& img, const SuperpixelMap& sp,
                                 const MergeParams& params);

}  // namespace tissueseg
