#include "tissueseg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tissueseg/augment.hpp"
#include "tissueseg/errors.hpp"
#include "tissueseg/image_io.hpp"

namespace tissueseg {

using nlohmann::json;

std::vector<std::vector<int>> TissueGraph::neighbors() const {
  std::vector<std::vector<int>> adj(num_nodes);
  for (const auto& [a, b] : edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

void TissueGraph::validate() const {
  if (num_nodes == 0) throw DataError("graph has no nodes");
  if (features.rows() != num_nodes) throw DataError("feature rows != num_nodes");
  if (centroids.rows() != num_nodes || centroids.cols() != 2) {
    throw DataError("centroids must be num_nodes x 2");
  }
  if (!features.all_finite()) throw DataError("non-finite node feature");
  for (double c : centroids.data()) {
    if (!std::isfinite(c) || c < 0.0 || c > 1.0) throw DataError("centroid outside [0,1]^2");
  }
  std::set<Edge> seen;
  for (const auto& [a, b] : edges) {
    if (a == b) throw DataError("self-loop on node " + std::to_string(a));
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= num_nodes ||
        static_cast<std::size_t>(b) >= num_nodes) {
      throw DataError("edge endpoint out of range");
    }
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw DataError("duplicate edge " + std::to_string(a) + "-" + std::to_string(b));
    }
  }
  if (node_labels.size() != num_nodes) throw DataError("node_labels size != num_nodes");
  for (int l : node_labels) {
    if (l != kUnlabeled && (l < 0 || l >= kNumPatterns)) {
      throw DataError("node label out of range: " + std::to_string(l));
    }
  }
}

std::vector<Edge> build_rag(const SuperpixelMap& sp) {
  std::set<Edge> edges;
  for (int y = 0; y < sp.height; ++y) {
    for (int x = 0; x < sp.width; ++x) {
      const int a = sp.at(x, y);
      if (x + 1 < sp.width) {
        const int b = sp.at(x + 1, y);
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
      }
      if (y + 1 < sp.height) {
        const int b = sp.at(x, y + 1);
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
      }
    }
  }
  return {edges.begin(), edges.end()};
}

Matrix segment_centroids(const SuperpixelMap& sp) {
  const auto n = static_cast<std::size_t>(sp.num_segments);
  Matrix sums(n, 2);
  std::vector<std::size_t> counts(n, 0);
  for (int y = 0; y < sp.height; ++y) {
    for (int x = 0; x < sp.width; ++x) {
      const auto l = static_cast<std::size_t>(sp.at(x, y));
      sums(l, 0) += x + 0.5;
      sums(l, 1) += y + 0.5;
      ++counts[l];
    }
  }
  for (std::size_t l = 0; l < n; ++l) {
    if (counts[l] == 0) throw DataError("segment " + std::to_string(l) + " has no pixels");
    sums(l, 0) = sums(l, 0) / static_cast<double>(counts[l]) / sp.width;
    sums(l, 1) = sums(l, 1) / static_cast<double>(counts[l]) / sp.height;
  }
  return sums;
}

NodeFeatures extract_node_features(const RasterImage& img, const SuperpixelMap& sp,
                                   const PatchEncoder& encoder, const PatchParams& params,
                                   std::optional<std::uint64_t> augment_seed) {
  if (img.width() != sp.width || img.height() != sp.height) {
    throw UsageError("image and superpixel map dimensions differ");
  }
  if (params.patch_size < 1 || params.patch_stride < 1) {
    throw UsageError("patch size and stride must be positive");
  }
  const auto n = static_cast<std::size_t>(sp.num_segments);
  struct Box {
    int x0 = INT32_MAX, y0 = INT32_MAX, x1 = -1, y1 = -1;
  };
  std::vector<Box> boxes(n);
  for (int y = 0; y < sp.height; ++y) {
    for (int x = 0; x < sp.width; ++x) {
      Box& b = boxes[static_cast<std::size_t>(sp.at(x, y))];
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }
  }

  NodeFeatures out;
  out.centroids = segment_centroids(sp);
  out.features = Matrix(n, encoder.dim());
  std::optional<Rng> rng;
  if (augment_seed) rng.emplace(*augment_seed);
  const int size = params.patch_size;
  const int half = size / 2;

  for (std::size_t l = 0; l < n; ++l) {
    const Box& b = boxes[l];
    std::vector<std::pair<int, int>> origins;
    for (int y0 = b.y0; y0 <= b.y1; y0 += params.patch_stride) {
      for (int x0 = b.x0; x0 <= b.x1; x0 += params.patch_stride) {
        const int cx = x0 + half;
        const int cy = y0 + half;
        if (cx < sp.width && cy < sp.height && sp.at(cx, cy) == static_cast<int>(l)) {
          origins.emplace_back(x0, y0);
        }
      }
    }
    if (origins.empty()) {
      const int cx = static_cast<int>(std::floor(out.centroids(l, 0) * sp.width));
      const int cy = static_cast<int>(std::floor(out.centroids(l, 1) * sp.height));
      origins.emplace_back(cx - half, cy - half);
    }
    auto row = out.features.row(l);
    for (const auto& [x0, y0] : origins) {
      RasterImage patch = crop_clamped(img, x0, y0, size);
      if (rng) patch = apply_transform(patch, sample_transform(*rng));
      const std::vector<double> code =
          encoder.encode(resize_bilinear(patch, kEncoderInputSize, kEncoderInputSize));
      if (code.size() != encoder.dim()) throw DataError("encoder returned wrong dimension");
      for (std::size_t k = 0; k < code.size(); ++k) row[k] += code[k];
    }
    for (double& v : row) v /= static_cast<double>(origins.size());
  }
  return out;
}

TissueGraph build_tissue_graph(const RasterImage& img, const SuperpixelMap& sp,
                               const PatchEncoder& encoder,
                               std::optional<GleasonLabel> image_label,
                               const PatchParams& params,
                               std::optional<std::uint64_t> augment_seed) {
  validate_superpixel_map(sp);
  NodeFeatures nf = extract_node_features(img, sp, encoder, params, augment_seed);
  TissueGraph g;
  g.num_nodes = static_cast<std::size_t>(sp.num_segments);
  g.edges = build_rag(sp);
  g.features = std::move(nf.features);
  g.centroids = std::move(nf.centroids);
  g.node_labels.assign(g.num_nodes, kUnlabeled);
  g.image_label = image_label;
  g.validate();
  return g;
}

TissueGraph build_tissue_graph_from_embeddings(const SuperpixelMap& sp, const Matrix& embeddings,
                                               std::optional<GleasonLabel> image_label) {
  validate_superpixel_map(sp);
  if (embeddings.rows() != static_cast<std::size_t>(sp.num_segments)) {
    throw DataError("embedding rows do not match segment count");
  }
  TissueGraph g;
  g.num_nodes = static_cast<std::size_t>(sp.num_segments);
  g.edges = build_rag(sp);
  g.features = embeddings;
  g.centroids = segment_centroids(sp);
  g.node_labels.assign(g.num_nodes, kUnlabeled);
  g.image_label = image_label;
  g.validate();
  return g;
}

Matrix load_embedding_sidecar(const std::filesystem::path& path, std::size_t num_segments) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::vector<double>> rows(num_segments);
  std::size_t dim = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) throw DataError("embedding sidecar line " + std::to_string(line_no) + " too short");
    if (cells[0] == "segment_id") continue;
    std::size_t id = 0;
    std::vector<double> values;
    try {
      id = std::stoul(cells[0]);
      for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw DataError("embedding sidecar line " + std::to_string(line_no) + " is not numeric");
    }
    if (id >= num_segments) throw DataError("embedding sidecar segment id out of range");
    if (dim == 0) dim = values.size();
    if (values.size() != dim) throw DataError("embedding sidecar has ragged rows");
    if (!rows[id].empty()) throw DataError("duplicate segment id in embedding sidecar");
    rows[id] = std::move(values);
  }
  Matrix m(num_segments, dim);
  for (std::size_t i = 0; i < num_segments; ++i) {
    if (rows[i].empty()) throw DataError("embedding sidecar missing segment " + std::to_string(i));
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  if (!m.all_finite()) throw DataError("non-finite value in embedding sidecar");
  return m;
}

std::vector<int> node_labels_from_mask(const SuperpixelMap& sp, const ClassMask& mask) {
  if (mask.width != sp.width || mask.height != sp.height) {
    throw DataError("mask and superpixel map dimensions differ");
  }
  std::vector<std::array<std::size_t, kNumPatterns>> votes(static_cast<std::size_t>(sp.num_segments));
  for (std::size_t p = 0; p < sp.labels.size(); ++p) {
    const int c = mask.classes[p];
    if (c >= kNumPatterns) throw DataError("mask class index out of range: " + std::to_string(c));
    ++votes[static_cast<std::size_t>(sp.labels[p])][static_cast<std::size_t>(c)];
  }
  std::vector<int> labels(votes.size());
  for (std::size_t l = 0; l < votes.size(); ++l) {
    labels[l] = static_cast<int>(std::max_element(votes[l].begin(), votes[l].end()) - votes[l].begin());
  }
  return labels;
}

std::string graph_to_json(const TissueGraph& g) {
  g.validate();
  json j;
  j["version"] = kGraphFormatVersion;
  j["num_nodes"] = g.num_nodes;
  j["feature_dim"] = g.features.cols();
  j["features"] = g.features.data();
  j["centroids"] = g.centroids.data();
  json edges = json::array();
  for (const auto& [a, b] : g.edges) edges.push_back({a, b});
  j["edges"] = std::move(edges);
  j["node_labels"] = g.node_labels;
  if (g.image_label) {
    j["image_label"] = {{"primary", std::string(to_string(g.image_label->primary))},
                        {"secondary", std::string(to_string(g.image_label->secondary))}};
  } else {
    j["image_label"] = nullptr;
  }
  return j.dump();
}

TissueGraph graph_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed graph file: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != kGraphFormatVersion) {
      throw DataError("graph file version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kGraphFormatVersion) + ")");
    }
    TissueGraph g;
    g.num_nodes = j.at("num_nodes").get<std::size_t>();
    const auto dim = j.at("feature_dim").get<std::size_t>();
    g.features = Matrix(g.num_nodes, dim, j.at("features").get<std::vector<double>>());
    g.centroids = Matrix(g.num_nodes, 2, j.at("centroids").get<std::vector<double>>());
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw DataError("malformed edge entry");
      g.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    g.node_labels = j.at("node_labels").get<std::vector<int>>();
    const json& lbl = j.at("image_label");
    if (!lbl.is_null()) {
      g.image_label = make_label(parse_pattern(lbl.at("primary").get<std::string>()),
                                 parse_pattern(lbl.at("secondary").get<std::string>()));
    }
    g.validate();
    return g;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed graph file: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed graph file: ") + e.what());
  }
}

void save_graph(const std::filesystem::path& path, const TissueGraph& g) {
  write_file_atomic(path, graph_to_json(g));
}

TissueGraph load_graph(const std::filesystem::path& path) {
  try {
    return graph_from_json(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace tissueseg
