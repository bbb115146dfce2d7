#include "tissueseg/encoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "tissueseg/errors.hpp"

namespace tissueseg {

std::vector<double> DefaultEncoder::encode(const RasterImage& patch) const {
  if (patch.width() != kEncoderInputSize || patch.height() != kEncoderInputSize) {
    throw UsageError("default encoder expects a 224x224 patch, got " +
                     std::to_string(patch.width()) + "x" + std::to_string(patch.height()));
  }
  std::vector<double> out(kDim, 0.0);
  const double n = static_cast<double>(patch.size());

  std::array<double, 3> sum{};
  for (const Rgb& px : patch.pixels()) {
    for (std::size_t c = 0; c < 3; ++c) {
      out[16 * c + px[c] / 16] += 1.0;
      sum[c] += px[c];
    }
  }
  for (std::size_t i = 0; i < 48; ++i) out[i] /= n;
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    double ss = 0.0;
    for (const Rgb& px : patch.pixels()) ss += (px[c] - mean) * (px[c] - mean);
    out[48 + c] = mean / 255.0;
    out[51 + c] = std::sqrt(ss / n) / 127.5;
  }

  const int w = patch.width();
  const int h = patch.height();
  auto gray = [&](int x, int y) {
    const Rgb& px = patch.clamped(x, y);
    return (px[0] + px[1] + px[2]) / 3.0;
  };
  const double norm = n * 255.0 * std::numbers::sqrt2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = gray(x + 1, y) - gray(x - 1, y);
      const double gy = gray(x, y + 1) - gray(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += std::numbers::pi;
      const int bin = std::min(9, static_cast<int>(angle / std::numbers::pi * 10.0));
      out[54 + static_cast<std::size_t>(bin)] += mag / norm;
    }
  }
  return out;
}

RasterImage resize_bilinear(const RasterImage& src, int width, int height) {
  RasterImage out(width, height);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), src.height() - 1);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), src.width() - 1);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - x0;
      Rgb& dst = out.at(x, y);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0)[c] * (1.0 - wx) + src.at(x1, y0)[c] * wx;
        const double bottom = src.at(x0, y1)[c] * (1.0 - wx) + src.at(x1, y1)[c] * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

RasterImage crop_clamped(const RasterImage& img, int x0, int y0, int size) {
  RasterImage out(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) out.at(x, y) = img.clamped(x0 + x, y0 + y);
  }
  return out;
}

}  // namespace tissueseg
