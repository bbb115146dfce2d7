#include "tissueseg/augment.hpp"

#include "tissueseg/errors.hpp"

namespace tissueseg {

RasterImage apply_transform(const RasterImage& patch, PatchTransform t) {
  if (patch.width() != patch.height()) throw UsageError("augmentation requires square patches");
  const int n = patch.width();
  RasterImage out(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      int dx = x;
      int dy = y;
      switch (t) {
        case PatchTransform::Identity: break;
        case PatchTransform::Rot90: dx = n - 1 - y; dy = x; break;
        case PatchTransform::Rot180: dx = n - 1 - x; dy = n - 1 - y; break;
        case PatchTransform::Rot270: dx = y; dy = n - 1 - x; break;
        case PatchTransform::FlipH: dx = n - 1 - x; break;
        case PatchTransform::FlipV: dy = n - 1 - y; break;
      }
      out.at(dx, dy) = patch.at(x, y);
    }
  }
  return out;
}

PatchTransform sample_transform(Rng& rng) {
  return static_cast<PatchTransform>(rng.below(kNumPatchTransforms));
}

std::vector<RasterImage> augment_node_patches(std::vector<RasterImage> patches, std::uint64_t seed) {
  Rng rng(seed);
  for (RasterImage& p : patches) {
    if (p.width() != p.height()) throw UsageError("augmentation requires square patches");
    p = apply_transform(p, sample_transform(rng));
  }
  return patches;
}

}  // namespace tissueseg
