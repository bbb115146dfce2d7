#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tissueseg/gleason.hpp"
#include "tissueseg/raster.hpp"

namespace tissueseg {

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct ManifestRow {
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;
  GleasonLabel label;
  Split split = Split::Train;
};

// CSV with header image_path,mask_path,primary,secondary,split. Relative
// paths are resolved against the manifest's directory; an empty mask_path
// means no mask. With `check_paths` every referenced file must exist.
std::vector<ManifestRow> parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                                        bool check_paths);
std::vector<ManifestRow> load_manifest(const std::filesystem::path& path, bool check_paths = true);
// Paths are written relative to `base_dir` when they lie below it.
std::string manifest_to_csv(const std::vector<ManifestRow>& rows, const std::filesystem::path& base_dir);

// Image label implied by a class mask: primary = highest pattern present,
// secondary = second highest present, else primary; (B,B) when benign only.
GleasonLabel label_from_mask(const ClassMask& mask);

struct ClassAppearance {
  std::array<double, 3> color{};  // mean RGB
  double noise = 10.0;            // per-pixel Gaussian std
  double texture_amplitude = 0.0;
  double texture_period = 8.0;    // pixels
  double texture_angle = 0.0;     // radians
};

struct SyntheticSpec {
  int width = 128;
  int height = 128;
  int min_regions = 5;
  int max_regions = 10;
  std::array<ClassAppearance, kNumPatterns> classes;
  // Cell-level class mixture over B, G3, G4, G5.
  std::array<double, kNumPatterns> mixture{0.4, 0.2, 0.2, 0.2};
  // Each image draws 0..max_patterns distinct malignant patterns (uniformly),
  // weighted by the mixture, and its cells use only those patterns and B.
  int max_patterns = 2;
  std::uint64_t seed = 7;

  // Distinct hues and textures per class.
  static SyntheticSpec separable();
  // Classes share nearly the same colour distribution.
  static SyntheticSpec overlapping();
};

// Throws UsageError on invalid specs; returns warnings for degenerate ones
// (e.g. two classes with identical appearance).
std::vector<std::string> validate_synthetic_spec(const SyntheticSpec& spec);

struct SyntheticSample {
  RasterImage image;
  ClassMask mask;
  GleasonLabel label;
};

// The index-th sample of the stream defined by spec.seed.
SyntheticSample generate_synthetic_sample(const SyntheticSpec& spec, std::uint64_t index);

struct SplitCounts {
  int train = 60;
  int val = 20;
  int test = 20;
  int total() const { return train + val + test; }
};

// Writes images/NNNN.png, masks/NNNN.png and manifest.csv below out_dir.
std::vector<ManifestRow> generate_synthetic_dataset(const SyntheticSpec& spec, const SplitCounts& counts,
                                                    const std::filesystem::path& out_dir);

}  // namespace tissueseg
