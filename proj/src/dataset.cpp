#include "tissueseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tissueseg/errors.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/rng.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<ManifestRow> parse_manifest(const std::string& text, const fs::path& base_dir, bool check_paths) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != std::vector<std::string>{"image_path", "mask_path", "primary",
                                                                             "secondary", "split"}) {
    throw DataError("manifest header must be image_path,mask_path,primary,secondary,split");
  }
  std::vector<ManifestRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    if (f.size() != 5) throw DataError(where + "expected 5 fields");
    ManifestRow r;
    r.image_path = base_dir / f[0];
    if (!f[1].empty()) r.mask_path = base_dir / f[1];
    try {
      r.label = make_label(parse_pattern(f[2]), parse_pattern(f[3]));
      r.split = parse_split(f[4]);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (check_paths) {
      if (!fs::exists(r.image_path)) throw DataError(where + "missing image " + r.image_path.string());
      if (r.mask_path && !fs::exists(*r.mask_path)) throw DataError(where + "missing mask " + r.mask_path->string());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ManifestRow> load_manifest(const fs::path& path, bool check_paths) {
  return parse_manifest(read_file(path), path.parent_path(), check_paths);
}

std::string manifest_to_csv(const std::vector<ManifestRow>& rows, const fs::path& base_dir) {
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base_dir);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  std::string out = "image_path,mask_path,primary,secondary,split\n";
  for (const ManifestRow& r : rows) {
    out += rel(r.image_path) + "," + (r.mask_path ? rel(*r.mask_path) : std::string()) + "," +
           std::string(to_string(r.label.primary)) + "," + std::string(to_string(r.label.secondary)) + "," +
           std::string(to_string(r.split)) + "\n";
  }
  return out;
}

GleasonLabel label_from_mask(const ClassMask& mask) {
  std::array<bool, kNumPatterns> present{};
  for (std::uint8_t c : mask.classes) {
    if (c >= kNumPatterns) throw DataError("mask class index out of range");
    present[c] = true;
  }
  std::vector<Pattern> found;
  for (int k = kNumPatterns - 1; k >= 1; --k) {
    if (present[static_cast<std::size_t>(k)]) found.push_back(pattern_from_index(k));
  }
  if (found.empty()) return {};
  return make_label(found[0], found.size() > 1 ? found[1] : found[0]);
}

SyntheticSpec SyntheticSpec::separable() {
  SyntheticSpec s;
  s.classes[0] = {{232, 200, 215}, 10.0, 10.0, 12.0, 0.0};
  s.classes[1] = {{90, 180, 95}, 10.0, 14.0, 6.0, 0.785};
  s.classes[2] = {{80, 100, 200}, 10.0, 14.0, 4.0, 1.571};
  s.classes[3] = {{190, 60, 50}, 10.0, 18.0, 3.0, 2.356};
  return s;
}

SyntheticSpec SyntheticSpec::overlapping() {
  SyntheticSpec s;
  s.classes[0] = {{160, 120, 150}, 35.0, 10.0, 6.0, 0.0};
  s.classes[1] = {{156, 116, 148}, 35.0, 10.0, 6.0, 0.3};
  s.classes[2] = {{152, 114, 152}, 35.0, 10.0, 6.0, 0.6};
  s.classes[3] = {{150, 110, 146}, 35.0, 10.0, 6.0, 0.9};
  return s;
}

std::vector<std::string> validate_synthetic_spec(const SyntheticSpec& s) {
  if (s.width < 1 || s.height < 1) throw UsageError("synthetic image size must be positive");
  if (s.min_regions < 1 || s.max_regions < s.min_regions) throw UsageError("invalid synthetic region count range");
  if (static_cast<long>(s.max_regions) > static_cast<long>(s.width) * s.height) {
    throw UsageError("more regions than pixels");
  }
  if (s.max_patterns < 0 || s.max_patterns > kNumPatterns - 1) throw UsageError("max_patterns must be in 0..3");
  double total = 0.0;
  for (double p : s.mixture) {
    if (!(p >= 0.0)) throw UsageError("mixture probabilities must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("mixture probabilities must sum to 1");
  if (s.mixture[0] <= 0.0 && s.max_patterns == 0) throw UsageError("benign-only images need a benign mixture weight");
  std::vector<std::string> warnings;
  for (std::size_t a = 0; a < s.classes.size(); ++a) {
    if (s.classes[a].noise < 0.0 || s.classes[a].texture_period <= 0.0) {
      throw UsageError("class noise must be >= 0 and texture period > 0");
    }
    for (std::size_t b = a + 1; b < s.classes.size(); ++b) {
      const auto& x = s.classes[a];
      const auto& y = s.classes[b];
      if (x.color == y.color && x.noise == y.noise && x.texture_amplitude == y.texture_amplitude &&
          x.texture_period == y.texture_period && x.texture_angle == y.texture_angle) {
        warnings.push_back("classes " + std::string(to_string(pattern_from_index(static_cast<int>(a)))) + " and " +
                           std::string(to_string(pattern_from_index(static_cast<int>(b)))) +
                           " have identical appearance");
      }
    }
  }
  return warnings;
}

namespace {

std::size_t weighted_pick(Rng& rng, const std::vector<double>& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  for (std::size_t i = w.size(); i > 0; --i) {
    if (w[i - 1] > 0.0) return i - 1;
  }
  return 0;
}

}  // namespace

SyntheticSample generate_synthetic_sample(const SyntheticSpec& spec, std::uint64_t index) {
  Rng rng(spec.seed * 0xD1B54A32D192ED03ULL + index * 0x9E3779B97F4A7C15ULL + 1);
  const int w = spec.width;
  const int h = spec.height;
  const int regions = spec.min_regions + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                             spec.max_regions - spec.min_regions + 1)));

  // Malignant patterns allowed in this image.
  std::vector<double> pick_weights(spec.mixture.begin() + 1, spec.mixture.end());
  std::vector<int> allowed;
  const int want = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_patterns + 1)));
  for (int k = 0; k < want; ++k) {
    if (std::all_of(pick_weights.begin(), pick_weights.end(), [](double x) { return x <= 0.0; })) break;
    const std::size_t i = weighted_pick(rng, pick_weights);
    allowed.push_back(static_cast<int>(i) + 1);
    pick_weights[i] = 0.0;
  }
  std::sort(allowed.begin(), allowed.end());
  if (allowed.empty() && spec.mixture[0] <= 0.0) allowed.push_back(1);

  // Distinct-pixel Voronoi sites.
  std::vector<std::pair<int, int>> sites;
  while (static_cast<int>(sites.size()) < regions) {
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
    if (std::find(sites.begin(), sites.end(), std::pair{x, y}) == sites.end()) sites.emplace_back(x, y);
  }

  // Cell classes: each allowed pattern gets at least one cell when possible.
  std::vector<double> cell_weights(kNumPatterns, 0.0);
  cell_weights[0] = spec.mixture[0];
  for (int a : allowed) cell_weights[static_cast<std::size_t>(a)] = spec.mixture[static_cast<std::size_t>(a)];
  std::vector<int> cell_class(static_cast<std::size_t>(regions));
  for (int r = 0; r < regions; ++r) {
    cell_class[static_cast<std::size_t>(r)] =
        r < static_cast<int>(allowed.size()) ? allowed[static_cast<std::size_t>(r)]
                                             : static_cast<int>(weighted_pick(rng, cell_weights));
  }

  SyntheticSample s;
  s.image = RasterImage(w, h);
  s.mask.width = w;
  s.mask.height = h;
  s.mask.classes.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  std::array<double, kNumPatterns> phase{};
  for (double& p : phase) p = rng.uniform(0.0, 6.283185307179586);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t best = 0;
      long best_d = -1;
      for (std::size_t r = 0; r < sites.size(); ++r) {
        const long dx = x - sites[r].first;
        const long dy = y - sites[r].second;
        const long d = dx * dx + dy * dy;
        if (best_d < 0 || d < best_d) {
          best_d = d;
          best = r;
        }
      }
      const int cls = cell_class[best];
      const ClassAppearance& a = spec.classes[static_cast<std::size_t>(cls)];
      const double t = a.texture_amplitude *
                       std::sin(6.283185307179586 * (x * std::cos(a.texture_angle) + y * std::sin(a.texture_angle)) /
                                    a.texture_period +
                                phase[static_cast<std::size_t>(cls)]);
      Rgb& px = s.image.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = a.color[static_cast<std::size_t>(c)] + t + a.noise * rng.normal();
        px[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
      s.mask.classes[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
          static_cast<std::uint8_t>(cls);
    }
  }
  s.label = label_from_mask(s.mask);
  return s;
}

std::vector<ManifestRow> generate_synthetic_dataset(const SyntheticSpec& spec, const SplitCounts& counts,
                                                    const fs::path& out_dir) {
  validate_synthetic_spec(spec);
  if (counts.train < 0 || counts.val < 0 || counts.test < 0 || counts.total() == 0) {
    throw UsageError("split counts must be >= 0 and not all zero");
  }
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  std::vector<ManifestRow> rows;
  for (int i = 0; i < counts.total(); ++i) {
    const SyntheticSample s = generate_synthetic_sample(spec, static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.png", i);
    ManifestRow r;
    r.image_path = out_dir / "images" / name;
    r.mask_path = out_dir / "masks" / name;
    r.label = s.label;
    r.split = i < counts.train ? Split::Train : (i < counts.train + counts.val ? Split::Val : Split::Test);
    write_png(r.image_path, s.image);
    write_mask_png(*r.mask_path, s.mask);
    rows.push_back(std::move(r));
  }
  write_file_atomic(out_dir / "manifest.csv", manifest_to_csv(rows, out_dir));
  return rows;
}

}  // namespace tissueseg
