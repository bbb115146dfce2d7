#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tissueseg/encoder.hpp"
#include "tissueseg/gleason.hpp"
#include "tissueseg/matrix.hpp"
#include "tissueseg/raster.hpp"

namespace tissueseg {

using Edge = std::pair<int, int>;

inline constexpr int kUnlabeled = -1;
inline constexpr int kGraphFormatVersion = 1;

// Superpixel tissue graph. Edges are stored once with first < second, sorted.
// Centroids are kept apart from `features` and concatenated at model input.
struct TissueGraph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  Matrix features;   // num_nodes x d
  Matrix centroids;  // num_nodes x 2, in [0,1]^2
  std::vector<int> node_labels;  // empty, or num_nodes entries (kUnlabeled allowed)
  std::optional<GleasonLabel> image_label;

  std::vector<std::vector<int>> neighbors() const;
  // Throws DataError on any broken invariant.
  void validate() const;

  bool operator==(const TissueGraph&) const = default;
};

// Region adjacency: (a, b) iff some pixel of a is 4-adjacent to one of b.
std::vector<Edge> build_rag(const SuperpixelMap& sp);

struct PatchParams {
  int patch_size = 144;
  int patch_stride = 144;
};

struct NodeFeatures {
  Matrix features;
  Matrix centroids;
};

// Patches are tiled over each segment's bounding box and kept when their
// centre pixel falls inside the segment; segments with no such patch get a
// single patch centred on the (rounded) centroid. Each patch is resized to
// the encoder input size and encoded; the node feature is the mean encoding.
// When `augment` is given every patch first receives a random transform.
NodeFeatures extract_node_features(const RasterImage& img, const SuperpixelMap& sp,
                                   const PatchEncoder& encoder, const PatchParams& params,
                                   std::optional<std::uint64_t> augment_seed = std::nullopt);

// Centroids from pixel-centre coordinates: ((mean x + 0.5)/W, (mean y + 0.5)/H).
Matrix segment_centroids(const SuperpixelMap& sp);

TissueGraph build_tissue_graph(const RasterImage& img, const SuperpixelMap& sp,
                               const PatchEncoder& encoder,
                               std::optional<GleasonLabel> image_label,
                               const PatchParams& params = {},
                               std::optional<std::uint64_t> augment_seed = std::nullopt);

// Same as build_tissue_graph but with node features from a precomputed
// embedding sidecar (CSV rows: segment_id, v0..v{d-1}).
TissueGraph build_tissue_graph_from_embeddings(const SuperpixelMap& sp, const Matrix& embeddings,
                                               std::optional<GleasonLabel> image_label);
Matrix load_embedding_sidecar(const std::filesystem::path& path, std::size_t num_segments);

// Majority ground-truth class per segment; ties go to the lower class index.
std::vector<int> node_labels_from_mask(const SuperpixelMap& sp, const ClassMask& mask);

std::string graph_to_json(const TissueGraph& g);
TissueGraph graph_from_json(const std::string& text);
void save_graph(const std::filesystem::path& path, const TissueGraph& g);
TissueGraph load_graph(const std::filesystem::path& path);

}  // namespace tissueseg
