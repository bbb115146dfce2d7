#include "tissueseg/raster.hpp"

#include <algorithm>
#include <queue>
#include <string>
#include <unordered_map>

#include "tissueseg/errors.hpp"

namespace tissueseg {

RasterImage::RasterImage(int width, int height, Rgb fill)
    : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw UsageError("raster dimensions must be positive, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

const Rgb& RasterImage::clamped(int x, int y) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return pixels_[index(x, y)];
}

int compact_labels(std::vector<int>& labels) {
  std::unordered_map<int, int> remap;
  for (int& l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  return static_cast<int>(remap.size());
}

void validate_superpixel_map(const SuperpixelMap& sp) {
  const std::size_t n = static_cast<std::size_t>(sp.width) * static_cast<std::size_t>(sp.height);
  if (sp.width < 1 || sp.height < 1 || sp.labels.size() != n) {
    throw DataError("superpixel map dimensions do not match label count");
  }
  if (sp.num_segments < 1) throw DataError("superpixel map has no segments");
  std::vector<std::size_t> first(static_cast<std::size_t>(sp.num_segments), n);
  for (std::size_t i = 0; i < n; ++i) {
    const int l = sp.labels[i];
    if (l < 0 || l >= sp.num_segments) {
      throw DataError("superpixel label " + std::to_string(l) + " out of range");
    }
    if (first[static_cast<std::size_t>(l)] == n) first[static_cast<std::size_t>(l)] = i;
  }
  std::vector<char> seen(n, 0);
  for (int l = 0; l < sp.num_segments; ++l) {
    const std::size_t start = first[static_cast<std::size_t>(l)];
    if (start == n) throw DataError("superpixel label " + std::to_string(l) + " unused");
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      const int x = static_cast<int>(p % static_cast<std::size_t>(sp.width));
      const int y = static_cast<int>(p / static_cast<std::size_t>(sp.width));
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= sp.width || ny[k] >= sp.height) continue;
        const std::size_t q2 = static_cast<std::size_t>(ny[k]) * static_cast<std::size_t>(sp.width) +
                               static_cast<std::size_t>(nx[k]);
        if (!seen[q2] && sp.labels[q2] == l) {
          seen[q2] = 1;
          q.push(q2);
        }
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw DataError("superpixel segment is not 4-connected");
  }
}

std::vector<std::vector<std::size_t>> segment_pixels(const SuperpixelMap& sp) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(sp.num_segments));
  for (std::size_t i = 0; i < sp.labels.size(); ++i) {
    out[static_cast<std::size_t>(sp.labels[i])].push_back(i);
  }
  return out;
}

}  // namespace tissueseg
