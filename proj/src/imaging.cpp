#include "tissueseg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "tissueseg/errors.hpp"

namespace tissueseg {

// ---------------------------------------------------------------------------
// Stain normalization
// ---------------------------------------------------------------------------

ChannelStats channel_stats(const RasterImage& img) {
  ChannelStats s;
  const double n = static_cast<double>(img.size());
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (const Rgb& px : img.pixels()) sum += px[c];
    const double mean = sum / n;
    double ss = 0.0;
    for (const Rgb& px : img.pixels()) ss += (px[c] - mean) * (px[c] - mean);
    s.mean[c] = mean;
    s.std[c] = std::sqrt(ss / n);
  }
  return s;
}

ChannelStatsNormalizer::ChannelStatsNormalizer(ChannelStats ref) : ref_(ref) {
  for (double s : ref_.std) {
    if (!(s > 0.0)) throw UsageError("reference channel std must be > 0");
  }
}

RasterImage ChannelStatsNormalizer::normalize(const RasterImage& img) const {
  const ChannelStats src = channel_stats(img);
  RasterImage out = img;
  for (std::size_t c = 0; c < 3; ++c) {
    // Constant channels are shifted onto the reference mean.
    const bool flat = src.std[c] < 1e-12;
    const double gain = flat ? 0.0 : ref_.std[c] / src.std[c];
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = flat ? ref_.mean[c] : (img[i][c] - src.mean[c]) * gain + ref_.mean[c];
      out[i][c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

RasterImage normalize_stain(const RasterImage& img, const ChannelStats& ref) {
  return ChannelStatsNormalizer(ref).normalize(img);
}

// ---------------------------------------------------------------------------
// SLIC
// ---------------------------------------------------------------------------

namespace {

struct Lab {
  double l, a, b;
};

double srgb_to_linear(double c) {
  c /= 255.0;
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double eps = 216.0 / 24389.0;
  constexpr double kappa = 24389.0 / 27.0;
  return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
}

// sRGB (D65) to CIELab.
Lab to_lab(const Rgb& px) {
  const double r = srgb_to_linear(px[0]);
  const double g = srgb_to_linear(px[1]);
  const double b = srgb_to_linear(px[2]);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b);
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x);
  const double fy = lab_f(y);
  const double fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double lab_dist2(const Lab& p, const Lab& q) {
  return (p.l - q.l) * (p.l - q.l) + (p.a - q.a) * (p.a - q.a) + (p.b - q.b) * (p.b - q.b);
}

struct Center {
  Lab color;
  double x, y;
};

// Picks the seed grid with the most cells not exceeding `n` whose cell
// aspect lies within [1/2, 2]; ties prefer more columns. Elongated rasters
// fall back to the least distorted grid.
std::pair<int, int> seed_grid(int width, int height, int n) {
  int best_nx = 0;
  int best_ny = 0;
  long best_cells = 0;
  int fallback_nx = 1;
  int fallback_ny = 1;
  double fallback_skew = std::numeric_limits<double>::infinity();
  for (int nx = 1; nx <= n; ++nx) {
    const int ny = n / nx;
    if (ny < 1 || nx > width || ny > height) continue;
    const double skew = std::abs(std::log((static_cast<double>(width) / nx) /
                                          (static_cast<double>(height) / ny)));
    if (skew < fallback_skew) {
      fallback_skew = skew;
      fallback_nx = nx;
      fallback_ny = ny;
    }
    const long cells = static_cast<long>(nx) * ny;
    if (skew <= std::log(2.0) + 1e-12 && cells >= best_cells) {
      best_nx = nx;
      best_ny = ny;
      best_cells = cells;
    }
  }
  if (best_cells == 0) return {fallback_nx, fallback_ny};
  return {best_nx, best_ny};
}

struct Components {
  std::vector<int> id;  // per pixel
  std::vector<int> label;
  std::vector<std::size_t> size;
  std::vector<std::set<int>> neighbors;
};

Components connected_components(const std::vector<int>& labels, int width, int height) {
  Components cc;
  const std::size_t n = labels.size();
  cc.id.assign(n, -1);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (cc.id[start] >= 0) continue;
    const int cid = static_cast<int>(cc.size.size());
    const int lbl = labels[start];
    cc.label.push_back(lbl);
    cc.size.push_back(0);
    cc.id[start] = cid;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++cc.size.back();
      const int x = static_cast<int>(p % static_cast<std::size_t>(width));
      const int y = static_cast<int>(p / static_cast<std::size_t>(width));
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= width || ny[k] >= height) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(nx[k]);
        if (cc.id[q] < 0 && labels[q] == lbl) {
          cc.id[q] = cid;
          stack.push_back(q);
        }
      }
    }
  }
  cc.neighbors.resize(cc.size.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                            static_cast<std::size_t>(x);
      if (x + 1 < width && cc.id[p + 1] != cc.id[p]) {
        cc.neighbors[static_cast<std::size_t>(cc.id[p])].insert(cc.id[p + 1]);
        cc.neighbors[static_cast<std::size_t>(cc.id[p + 1])].insert(cc.id[p]);
      }
      if (y + 1 < height) {
        const std::size_t q = p + static_cast<std::size_t>(width);
        if (cc.id[q] != cc.id[p]) {
          cc.neighbors[static_cast<std::size_t>(cc.id[p])].insert(cc.id[q]);
          cc.neighbors[static_cast<std::size_t>(cc.id[q])].insert(cc.id[p]);
        }
      }
    }
  }
  return cc;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int a) {
    while (parent_[static_cast<std::size_t>(a)] != a) {
      parent_[static_cast<std::size_t>(a)] = parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(a)])];
      a = parent_[static_cast<std::size_t>(a)];
    }
    return a;
  }
  // Attaches the set of `child` under the root of `target`.
  void attach(int child, int target) {
    const int rc = find(child);
    const int rt = find(target);
    if (rc == rt) return;
    parent_[static_cast<std::size_t>(rc)] = rt;
    size_[static_cast<std::size_t>(rt)] += size_[static_cast<std::size_t>(rc)];
  }
  std::size_t& size(int root) { return size_[static_cast<std::size_t>(root)]; }

 private:
  std::vector<int> parent_;
  std::vector<std::size_t> size_;
};

// Makes every label 4-connected, absorbing small or surplus fragments into
// their largest neighbour, and keeps the segment count at most `max_segments`.
std::vector<int> enforce_connectivity(const std::vector<int>& labels, int width, int height,
                                      std::size_t min_size, int max_segments) {
  Components cc = connected_components(labels, width, height);
  const std::size_t ncomp = cc.size.size();

  std::map<int, int> largest;  // label -> component
  for (std::size_t c = 0; c < ncomp; ++c) {
    auto [it, inserted] = largest.try_emplace(cc.label[c], static_cast<int>(c));
    if (!inserted && cc.size[c] > cc.size[static_cast<std::size_t>(it->second)]) {
      it->second = static_cast<int>(c);
    }
  }

  std::vector<char> keep(ncomp, 0);
  int kept = 0;
  for (const auto& [lbl, c] : largest) {
    if (cc.size[static_cast<std::size_t>(c)] >= min_size || ncomp == 1) {
      keep[static_cast<std::size_t>(c)] = 1;
      ++kept;
    }
  }
  std::vector<int> extras;
  for (std::size_t c = 0; c < ncomp; ++c) {
    if (!keep[c] && cc.size[c] >= min_size) extras.push_back(static_cast<int>(c));
  }
  std::stable_sort(extras.begin(), extras.end(), [&](int a, int b) {
    return cc.size[static_cast<std::size_t>(a)] > cc.size[static_cast<std::size_t>(b)];
  });
  for (int c : extras) {
    if (kept >= max_segments) break;
    keep[static_cast<std::size_t>(c)] = 1;
    ++kept;
  }

  UnionFind uf(ncomp);
  for (std::size_t c = 0; c < ncomp; ++c) uf.size(static_cast<int>(c)) = cc.size[c];

  std::vector<int> fragments;
  for (std::size_t c = 0; c < ncomp; ++c) {
    if (!keep[c]) fragments.push_back(static_cast<int>(c));
  }
  std::stable_sort(fragments.begin(), fragments.end(), [&](int a, int b) {
    return cc.size[static_cast<std::size_t>(a)] < cc.size[static_cast<std::size_t>(b)];
  });
  for (int f : fragments) {
    const int own = uf.find(f);
    int best = -1;
    std::size_t best_size = 0;
    for (int nb : cc.neighbors[static_cast<std::size_t>(f)]) {
      const int r = uf.find(nb);
      if (r == own) continue;
      const std::size_t s = uf.size(r);
      if (best < 0 || s > best_size || (s == best_size && r < best)) {
        best = r;
        best_size = s;
      }
    }
    if (best >= 0) uf.attach(f, best);
  }

  std::vector<int> out(labels.size());
  for (std::size_t p = 0; p < labels.size(); ++p) out[p] = uf.find(cc.id[p]);
  int count = compact_labels(out);

  // Rare leftover groups beyond the budget: fold smallest into largest neighbour.
  while (count > max_segments) {
    Components g = connected_components(out, width, height);
    std::size_t smallest = 0;
    for (std::size_t c = 1; c < g.size.size(); ++c) {
      if (g.size[c] < g.size[smallest]) smallest = c;
    }
    int target = -1;
    for (int nb : g.neighbors[smallest]) {
      if (target < 0 || g.size[static_cast<std::size_t>(nb)] > g.size[static_cast<std::size_t>(target)]) {
        target = nb;
      }
    }
    if (target < 0) break;
    const int from = g.label[smallest];
    const int to = g.label[static_cast<std::size_t>(target)];
    for (int& l : out) {
      if (l == from) l = to;
    }
    count = compact_labels(out);
  }
  return out;
}

}  // namespace

SuperpixelMap slic(const RasterImage& img, const SlicParams& params) {
  const int width = img.width();
  const int height = img.height();
  const std::size_t npix = img.size();
  if (params.n_segments < 1) throw UsageError("n_segments must be >= 1");
  if (static_cast<std::size_t>(params.n_segments) > npix) {
    throw UsageError("too many segments: " + std::to_string(params.n_segments) + " > " +
                     std::to_string(npix) + " pixels");
  }
  if (!(params.compactness > 0.0)) throw UsageError("compactness must be > 0");
  if (params.iters < 1) throw UsageError("iters must be >= 1");

  std::vector<Lab> lab(npix);
  for (std::size_t i = 0; i < npix; ++i) lab[i] = to_lab(img[i]);

  const auto [nx, ny] = seed_grid(width, height, params.n_segments);
  const double cell_w = static_cast<double>(width) / nx;
  const double cell_h = static_cast<double>(height) / ny;
  const double step = std::sqrt(cell_w * cell_h);

  auto lab_at = [&](int x, int y) -> const Lab& {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return lab[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  };
  auto gradient = [&](int x, int y) {
    return lab_dist2(lab_at(x + 1, y), lab_at(x - 1, y)) + lab_dist2(lab_at(x, y + 1), lab_at(x, y - 1));
  };

  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx * ny));
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      Center c;
      c.x = (i + 0.5) * cell_w;
      c.y = (j + 0.5) * cell_h;
      int px = std::clamp(static_cast<int>(std::floor(c.x)), 0, width - 1);
      int py = std::clamp(static_cast<int>(std::floor(c.y)), 0, height - 1);
      // Nudge seeds off edges: lowest gradient in the 3x3 neighbourhood.
      double best = gradient(px, py);
      int bx = px;
      int by = py;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = px + dx;
          const int qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= width || qy >= height) continue;
          const double g = gradient(qx, qy);
          if (g < best) {
            best = g;
            bx = qx;
            by = qy;
          }
        }
      }
      if (bx != px || by != py) {
        c.x = bx + 0.5;
        c.y = by + 0.5;
      }
      c.color = lab_at(bx, by);
      centers.push_back(c);
    }
  }

  const double spatial_scale = (params.compactness * params.compactness) / (step * step);
  auto distance = [&](const Center& c, std::size_t p, int x, int y) {
    const double dx = (x + 0.5) - c.x;
    const double dy = (y + 0.5) - c.y;
    return lab_dist2(lab[p], c.color) + (dx * dx + dy * dy) * spatial_scale;
  };

  std::vector<int> labels(npix, -1);
  std::vector<double> best(npix);
  for (int it = 0; it < params.iters; ++it) {
    std::fill(labels.begin(), labels.end(), -1);
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x - step)));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(c.x + step)));
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y - step)));
      const int y1 = std::min(height - 1, static_cast<int>(std::ceil(c.y + step)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                                static_cast<std::size_t>(x);
          const double d = distance(c, p, x, y);
          if (d < best[p]) {
            best[p] = d;
            labels[p] = static_cast<int>(k);
          }
        }
      }
    }
    for (std::size_t p = 0; p < npix; ++p) {
      if (labels[p] >= 0) continue;
      const int x = static_cast<int>(p % static_cast<std::size_t>(width));
      const int y = static_cast<int>(p / static_cast<std::size_t>(width));
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = distance(centers[k], p, x, y);
        if (d < best[p]) {
          best[p] = d;
          labels[p] = static_cast<int>(k);
        }
      }
    }

    std::vector<std::array<double, 5>> acc(centers.size(), {0, 0, 0, 0, 0});
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t p = 0; p < npix; ++p) {
      const auto k = static_cast<std::size_t>(labels[p]);
      acc[k][0] += lab[p].l;
      acc[k][1] += lab[p].a;
      acc[k][2] += lab[p].b;
      acc[k][3] += static_cast<double>(p % static_cast<std::size_t>(width)) + 0.5;
      acc[k][4] += static_cast<double>(p / static_cast<std::size_t>(width)) + 0.5;
      ++count[k];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (count[k] == 0) continue;
      const double n = static_cast<double>(count[k]);
      centers[k] = {{acc[k][0] / n, acc[k][1] / n, acc[k][2] / n}, acc[k][3] / n, acc[k][4] / n};
    }
  }

  const auto expected_area = static_cast<double>(npix) / static_cast<double>(centers.size());
  const auto min_size = static_cast<std::size_t>(std::ceil(params.min_fragment_fraction * expected_area));
  SuperpixelMap sp;
  sp.width = width;
  sp.height = height;
  sp.labels = enforce_connectivity(labels, width, height, min_size, params.n_segments);
  sp.num_segments = compact_labels(sp.labels);
  return sp;
}

// ---------------------------------------------------------------------------
// Color features and hierarchical merging
// ---------------------------------------------------------------------------

namespace {

using ChannelHistogram = std::array<std::size_t, 256>;
using RegionHistogram = std::array<ChannelHistogram, 3>;

ColorFeatureVector features_from_histogram(const RegionHistogram& hist, std::size_t n) {
  ColorFeatureVector f{};
  const double count = static_cast<double>(n);
  for (std::size_t c = 0; c < 3; ++c) {
    const ChannelHistogram& h = hist[c];
    double* block = f.data() + 13 * c;
    double sum = 0.0;
    for (std::size_t v = 0; v < 256; ++v) {
      block[v / 32] += static_cast<double>(h[v]);
      sum += static_cast<double>(v) * static_cast<double>(h[v]);
    }
    double energy = 0.0;
    for (std::size_t b = 0; b < 8; ++b) {
      block[b] /= count;
      energy += block[b] * block[b];
    }
    const double mean = sum / count;
    double m2 = 0.0;
    double m3 = 0.0;
    for (std::size_t v = 0; v < 256; ++v) {
      if (h[v] == 0) continue;
      const double d = static_cast<double>(v) - mean;
      m2 += d * d * static_cast<double>(h[v]);
      m3 += d * d * d * static_cast<double>(h[v]);
    }
    m2 /= count;
    m3 /= count;
    const double sd = std::sqrt(m2);
    // Lower median: sorted position (n-1)/2.
    const std::size_t rank = (n - 1) / 2;
    std::size_t cum = 0;
    std::size_t median = 0;
    for (std::size_t v = 0; v < 256; ++v) {
      cum += h[v];
      if (cum > rank) {
        median = v;
        break;
      }
    }
    block[8] = mean;
    block[9] = sd;
    block[10] = static_cast<double>(median);
    block[11] = energy;
    block[12] = sd < 1e-12 ? 0.0 : m3 / (sd * sd * sd);
  }
  return f;
}

RegionHistogram region_histogram(const RasterImage& img, std::span<const std::size_t> region) {
  RegionHistogram hist{};
  for (std::size_t p : region) {
    for (std::size_t c = 0; c < 3; ++c) ++hist[c][img[p][c]];
  }
  return hist;
}

}  // namespace

ColorFeatureVector region_color_features(const RasterImage& img,
                                         std::span<const std::size_t> region) {
  if (region.empty()) throw UsageError("region_color_features: empty region");
  for (std::size_t p : region) {
    if (p >= img.size()) throw UsageError("region_color_features: pixel index out of range");
  }
  return features_from_histogram(region_histogram(img, region), region.size());
}

ColorFeatureVector merge_scaled(const ColorFeatureVector& f) {
  ColorFeatureVector s = f;
  for (std::size_t c = 0; c < 3; ++c) {
    double* block = s.data() + 13 * c;
    block[8] /= 255.0;
    block[9] /= 255.0;
    block[10] /= 255.0;
    block[12] = std::clamp(block[12], -3.0, 3.0) / 3.0;
  }
  return s;
}

double color_feature_distance(const ColorFeatureVector& a, const ColorFeatureVector& b) {
  const ColorFeatureVector sa = merge_scaled(a);
  const ColorFeatureVector sb = merge_scaled(b);
  double d = 0.0;
  for (std::size_t i = 0; i < kColorFeatureDim; ++i) d += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(d);
}

SuperpixelMap hierarchical_merge(const RasterImage& img, const SuperpixelMap& sp,
                                 const MergeParams& params) {
  validate_superpixel_map(sp);
  if (img.width() != sp.width || img.height() != sp.height) {
    throw UsageError("hierarchical_merge: image and superpixel map dimensions differ");
  }
  const auto nseg = static_cast<std::size_t>(sp.num_segments);

  struct Region {
    RegionHistogram hist{};
    std::size_t count = 0;
    ColorFeatureVector scaled{};
    std::set<int> neighbors;
    bool alive = true;
  };
  std::vector<Region> regions(nseg);
  for (std::size_t p = 0; p < sp.labels.size(); ++p) {
    Region& r = regions[static_cast<std::size_t>(sp.labels[p])];
    for (std::size_t c = 0; c < 3; ++c) ++r.hist[c][img[p][c]];
    ++r.count;
  }
  for (int y = 0; y < sp.height; ++y) {
    for (int x = 0; x < sp.width; ++x) {
      const int a = sp.at(x, y);
      if (x + 1 < sp.width && sp.at(x + 1, y) != a) {
        regions[static_cast<std::size_t>(a)].neighbors.insert(sp.at(x + 1, y));
        regions[static_cast<std::size_t>(sp.at(x + 1, y))].neighbors.insert(a);
      }
      if (y + 1 < sp.height && sp.at(x, y + 1) != a) {
        regions[static_cast<std::size_t>(a)].neighbors.insert(sp.at(x, y + 1));
        regions[static_cast<std::size_t>(sp.at(x, y + 1))].neighbors.insert(a);
      }
    }
  }
  for (Region& r : regions) r.scaled = merge_scaled(features_from_histogram(r.hist, r.count));

  auto dist = [&](int a, int b) {
    const auto& fa = regions[static_cast<std::size_t>(a)].scaled;
    const auto& fb = regions[static_cast<std::size_t>(b)].scaled;
    double d = 0.0;
    for (std::size_t i = 0; i < kColorFeatureDim; ++i) d += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    return std::sqrt(d);
  };

  // Ordered by (distance, smaller id, larger id).
  std::set<std::tuple<double, int, int>> queue;
  std::map<std::pair<int, int>, double> pair_dist;
  auto add_pair = [&](int a, int b) {
    if (a > b) std::swap(a, b);
    const double d = dist(a, b);
    pair_dist[{a, b}] = d;
    queue.emplace(d, a, b);
  };
  auto drop_pair = [&](int a, int b) {
    if (a > b) std::swap(a, b);
    auto it = pair_dist.find({a, b});
    if (it == pair_dist.end()) return;
    queue.erase({it->second, a, b});
    pair_dist.erase(it);
  };
  for (std::size_t a = 0; a < nseg; ++a) {
    for (int b : regions[a].neighbors) {
      if (static_cast<int>(a) < b) add_pair(static_cast<int>(a), b);
    }
  }

  std::vector<int> parent(nseg);
  std::iota(parent.begin(), parent.end(), 0);
  std::size_t alive = nseg;
  while (!queue.empty() && alive > static_cast<std::size_t>(std::max(params.target_max_nodes, 1))) {
    const auto [d, a, b] = *queue.begin();
    if (!(d < params.sim_threshold)) break;
    Region& ra = regions[static_cast<std::size_t>(a)];
    Region& rb = regions[static_cast<std::size_t>(b)];
    for (int nb : ra.neighbors) drop_pair(a, nb);
    for (int nb : rb.neighbors) drop_pair(b, nb);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t v = 0; v < 256; ++v) ra.hist[c][v] += rb.hist[c][v];
    }
    ra.count += rb.count;
    for (int nb : rb.neighbors) {
      if (nb == a) continue;
      ra.neighbors.insert(nb);
      auto& nset = regions[static_cast<std::size_t>(nb)].neighbors;
      nset.erase(b);
      nset.insert(a);
    }
    ra.neighbors.erase(b);
    rb.neighbors.clear();
    rb.alive = false;
    parent[static_cast<std::size_t>(b)] = a;
    ra.scaled = merge_scaled(features_from_histogram(ra.hist, ra.count));
    for (int nb : ra.neighbors) add_pair(a, nb);
    --alive;
  }

  auto root = [&](int l) {
    while (parent[static_cast<std::size_t>(l)] != l) l = parent[static_cast<std::size_t>(l)];
    return l;
  };
  SuperpixelMap out;
  out.width = sp.width;
  out.height = sp.height;
  out.labels.resize(sp.labels.size());
  for (std::size_t p = 0; p < sp.labels.size(); ++p) out.labels[p] = root(sp.labels[p]);
  out.num_segments = compact_labels(out.labels);
  return out;
}

}  // namespace tissueseg
