#pragma once

#include <cstdint>
#include <vector>

#include "tissueseg/raster.hpp"
#include "tissueseg/rng.hpp"

namespace tissueseg {

// Geometric patch transforms used for node augmentation.
enum class PatchTransform { Identity, Rot90, Rot180, Rot270, FlipH, FlipV };

inline constexpr int kNumPatchTransforms = 6;

// Rot90 sends pixel (x, y) of an N x N patch to (N-1-y, x).
RasterImage apply_transform(const RasterImage& patch, PatchTransform t);

// Draws one transform uniformly from the six above.
PatchTransform sample_transform(Rng& rng);

// Applies an independently sampled transform to every patch.
std::vector<RasterImage> augment_node_patches(std::vector<RasterImage> patches, std::uint64_t seed);

}  // namespace tissueseg
