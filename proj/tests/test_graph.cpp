#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "test_util.hpp"
#include "tissueseg/augment.hpp"
#include "tissueseg/encoder.hpp"
#include "tissueseg/errors.hpp"
#include "tissueseg/graph.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/imaging.hpp"

using namespace tissueseg;
using namespace tissueseg::testing;

namespace {

RasterImage noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RasterImage img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    for (int c = 0; c < 3; ++c) img[i][c] = static_cast<std::uint8_t>(rng.below(256));
  }
  return img;
}

// Counts 4-adjacent label pairs by brute force.
std::set<Edge> rag_oracle(const SuperpixelMap& sp) {
  std::set<Edge> e;
  for (int y = 0; y < sp.height; ++y) {
    for (int x = 0; x < sp.width; ++x) {
      for (int y2 = 0; y2 < sp.height; ++y2) {
        for (int x2 = 0; x2 < sp.width; ++x2) {
          if (std::abs(x - x2) + std::abs(y - y2) != 1) continue;
          const int a = sp.at(x, y), b = sp.at(x2, y2);
          if (a != b) e.insert({std::min(a, b), std::max(a, b)});
        }
      }
    }
  }
  return e;
}

std::filesystem::path scratch_dir(const char* name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("rag of two side-by-side segments has one edge") {
  CHECK(build_rag(stripe_map(8, 3, 2)) == std::vector<Edge>{{0, 1}});
}

TEST_CASE("rag of a 2x2 pixel grid has no diagonals") {
  const auto edges = build_rag(pixel_grid_map(2, 2));
  CHECK(edges.size() == 4);
  CHECK(edges == std::vector<Edge>{{0, 1}, {0, 2}, {1, 3}, {2, 3}});
}

TEST_CASE("rag of a single segment is empty") {
  CHECK(build_rag(stripe_map(5, 5, 1)).empty());
}

TEST_CASE("rag matches brute-force adjacency on slic maps") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SlicParams p;
    p.n_segments = 12 + 6 * static_cast<int>(seed);
    const SuperpixelMap sp = slic(noise_image(24, 20, seed), p);
    const auto edges = build_rag(sp);
    const auto oracle = rag_oracle(sp);
    CHECK(std::set<Edge>(edges.begin(), edges.end()) == oracle);
    CHECK(edges.size() == oracle.size());
    std::vector<int> degree(static_cast<std::size_t>(sp.num_segments), 0);
    for (const auto& [a, b] : edges) {
      CHECK(a < b);
      ++degree[static_cast<std::size_t>(a)];
      ++degree[static_cast<std::size_t>(b)];
    }
    for (int d : degree) CHECK(d < sp.num_segments);
  }
}

TEST_CASE("centroid uses pixel centres normalised by image size") {
  // Pixels x in {49, 50}, y in {99, 100}: centre mean (50, 100).
  SuperpixelMap sp;
  sp.width = 200;
  sp.height = 400;
  sp.num_segments = 2;
  sp.labels.assign(200 * 400, 1);
  for (int y : {99, 100}) {
    for (int x : {49, 50}) sp.labels[static_cast<std::size_t>(y) * 200 + x] = 0;
  }
  const Matrix c = segment_centroids(sp);
  CHECK(c(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(c(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("2x2 grid graph") {
  const RasterImage img(2, 2, {10, 20, 30});
  const TissueGraph g = build_tissue_graph(img, pixel_grid_map(2, 2), DefaultEncoder{}, std::nullopt);
  CHECK(g.num_nodes == 4);
  CHECK(g.edges.size() == 4);
  const double expect[4][2] = {{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g.centroids(i, 0) == expect[i][0]);
    CHECK(g.centroids(i, 1) == expect[i][1]);
  }
}

TEST_CASE("one-segment map gives one node and no edges") {
  const TissueGraph g = build_tissue_graph(noise_image(20, 20, 1), stripe_map(20, 20, 1), DefaultEncoder{},
                                           make_label(Pattern::G4, Pattern::G3));
  CHECK(g.num_nodes == 1);
  CHECK(g.edges.empty());
  CHECK(g.image_label == make_label(Pattern::G4, Pattern::G3));
}

TEST_CASE("small segment is encoded from a single patch") {
  const RasterImage img = noise_image(40, 40, 3);
  SuperpixelMap sp;
  sp.width = 40;
  sp.height = 40;
  sp.num_segments = 2;
  sp.labels.assign(1600, 1);
  for (int y = 10; y < 14; ++y) {
    for (int x = 10; x < 14; ++x) sp.labels[static_cast<std::size_t>(y) * 40 + x] = 0;
  }
  PatchParams pp;
  pp.patch_size = 16;
  pp.patch_stride = 16;
  const DefaultEncoder enc;
  const NodeFeatures nf = extract_node_features(img, sp, enc, pp);
  // Centroid pixel (12, 12): a 16-pixel patch centred there starts at (4, 4).
  const auto code = enc.encode(resize_bilinear(crop_clamped(img, 4, 4, 16), 224, 224));
  for (std::size_t k = 0; k < code.size(); ++k) CHECK(nf.features(0, k) == code[k]);
}

TEST_CASE("feature and centroid shapes follow the segment count") {
  for (int n : {1, 3, 7}) {
    const SuperpixelMap sp = stripe_map(21, 9, n);
    PatchParams pp;
    pp.patch_size = 8;
    pp.patch_stride = 8;
    const NodeFeatures nf = extract_node_features(noise_image(21, 9, 2), sp, DefaultEncoder{}, pp);
    CHECK(nf.features.rows() == static_cast<std::size_t>(n));
    CHECK(nf.features.cols() == 64);
    CHECK(nf.centroids.rows() == static_cast<std::size_t>(n));
    CHECK(nf.centroids.cols() == 2);
    for (double c : nf.centroids.data()) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
}

TEST_CASE("segment relabelling permutes features and edges consistently") {
  const RasterImage img = noise_image(30, 24, 4);
  SlicParams p;
  p.n_segments = 10;
  const SuperpixelMap sp = slic(img, p);
  const auto n = static_cast<std::size_t>(sp.num_segments);
  std::vector<int> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>((i * 3 + 1) % n);
  std::set<int> distinct(perm.begin(), perm.end());
  REQUIRE(distinct.size() == n);
  SuperpixelMap q = sp;
  for (int& l : q.labels) l = perm[static_cast<std::size_t>(l)];
  PatchParams pp;
  pp.patch_size = 8;
  pp.patch_stride = 8;
  const TissueGraph a = build_tissue_graph(img, sp, DefaultEncoder{}, std::nullopt, pp);
  const TissueGraph b = build_tissue_graph(img, q, DefaultEncoder{}, std::nullopt, pp);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(perm[i]);
    for (std::size_t k = 0; k < a.features.cols(); ++k) CHECK(a.features(i, k) == b.features(j, k));
    CHECK(a.centroids(i, 0) == b.centroids(j, 0));
  }
  std::set<Edge> mapped;
  for (const auto& [x, y] : a.edges) {
    const int u = perm[static_cast<std::size_t>(x)], v = perm[static_cast<std::size_t>(y)];
    mapped.insert({std::min(u, v), std::max(u, v)});
  }
  CHECK(mapped == std::set<Edge>(b.edges.begin(), b.edges.end()));
}

TEST_CASE("default encoder on a constant patch") {
  const auto v = DefaultEncoder{}.encode(RasterImage(224, 224, {40, 130, 250}));
  REQUIRE(v.size() == 64);
  const int bins[3] = {40 / 16, 130 / 16, 250 / 16};
  for (int c = 0; c < 3; ++c) {
    for (int b = 0; b < 16; ++b) CHECK(v[16 * c + b] == (b == bins[c] ? 1.0 : 0.0));
  }
  CHECK(v[48] == doctest::Approx(40.0 / 255));
  CHECK(v[49] == doctest::Approx(130.0 / 255));
  CHECK(v[50] == doctest::Approx(250.0 / 255));
  for (int k = 51; k < 64; ++k) CHECK(v[k] == 0.0);
}

TEST_CASE("default encoder is deterministic with a fixed dimension") {
  const RasterImage p = resize_bilinear(noise_image(50, 50, 6), 224, 224);
  const DefaultEncoder enc;
  CHECK(enc.encode(p) == enc.encode(p));
  CHECK(enc.encode(p).size() == 64);
  CHECK_THROWS_AS(enc.encode(RasterImage(100, 100)), UsageError);
}

TEST_CASE("graph save and load round trip") {
  Rng rng(12);
  TissueGraph g = random_graph(rng, 9, 5);
  g.node_labels[2] = 3;
  g.node_labels[4] = 0;
  g.image_label = make_label(Pattern::G5, Pattern::G3);
  const auto dir = scratch_dir("tissueseg_graph_io");
  save_graph(dir / "g.json", g);
  CHECK(load_graph(dir / "g.json") == g);

  g.image_label.reset();
  CHECK(graph_from_json(graph_to_json(g)) == g);
  std::filesystem::remove_all(dir);
}

TEST_CASE("truncated and non-finite graph files are rejected") {
  Rng rng(13);
  const TissueGraph g = random_graph(rng, 6, 4);
  const std::string text = graph_to_json(g);
  CHECK_THROWS_AS(graph_from_json(text.substr(0, text.size() / 2)), DataError);

  const auto pos = text.find("\"features\":[") + 12;
  std::string nan_text = text;
  nan_text.replace(pos, nan_text.find(',', pos) - pos, "NaN");
  CHECK_THROWS_AS(graph_from_json(nan_text), DataError);

  TissueGraph bad = g;
  bad.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(graph_to_json(bad), DataError);

  std::string old = text;
  old.replace(old.find("\"version\":1"), 11, "\"version\":9");
  CHECK_THROWS_AS(graph_from_json(old), DataError);
}

TEST_CASE("graph validation catches broken invariants") {
  Rng rng(14);
  TissueGraph g = random_graph(rng, 5, 3);
  CHECK_NOTHROW(g.validate());
  TissueGraph loop = g;
  loop.edges.push_back({2, 2});
  CHECK_THROWS_AS(loop.validate(), DataError);
  TissueGraph dup = g;
  dup.edges = {{0, 1}, {1, 0}};
  CHECK_THROWS_AS(dup.validate(), DataError);
  TissueGraph far = g;
  far.centroids(1, 1) = 1.5;
  CHECK_THROWS_AS(far.validate(), DataError);
}

TEST_CASE("node labels from mask take the majority class") {
  const SuperpixelMap sp = stripe_map(4, 1, 2);
  ClassMask m{4, 1, {2, 2, 1, 3}};
  CHECK(node_labels_from_mask(sp, m) == std::vector<int>{2, 1});
}

TEST_CASE("embedding sidecar import") {
  const auto dir = scratch_dir("tissueseg_sidecar");
  {
    std::ofstream f(dir / "emb.csv");
    f << "1,0.5,1.5\n0,2,3\n";
  }
  const Matrix m = load_embedding_sidecar(dir / "emb.csv", 2);
  CHECK(m == Matrix(2, 2, {2, 3, 0.5, 1.5}));
  const TissueGraph g = build_tissue_graph_from_embeddings(stripe_map(4, 2, 2), m, std::nullopt);
  CHECK(g.features == m);
  CHECK(g.edges.size() == 1);
  CHECK_THROWS_AS(load_embedding_sidecar(dir / "emb.csv", 3), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("rot180 twice is the identity and rot90 moves (x, y) to (N-1-y, x)") {
  const RasterImage p = noise_image(7, 7, 15);
  CHECK(apply_transform(apply_transform(p, PatchTransform::Rot180), PatchTransform::Rot180) == p);
  const RasterImage r = apply_transform(p, PatchTransform::Rot90);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) CHECK(r.at(6 - y, x) == p.at(x, y));
  }
  for (PatchTransform t : {PatchTransform::FlipH, PatchTransform::FlipV}) {
    CHECK(apply_transform(apply_transform(p, t), t) == p);
  }
  const RasterImage four = apply_transform(
      apply_transform(apply_transform(r, PatchTransform::Rot90), PatchTransform::Rot90), PatchTransform::Rot90);
  CHECK(four == p);
  CHECK(apply_transform(p, PatchTransform::Rot270) ==
        apply_transform(apply_transform(p, PatchTransform::Rot180), PatchTransform::Rot90));
  CHECK_THROWS_AS(apply_transform(RasterImage(3, 4), PatchTransform::Rot90), UsageError);
}

TEST_CASE("augmentation draws every transform and is seeded") {
  Rng rng(3);
  std::set<PatchTransform> seen;
  for (int i = 0; i < 200; ++i) seen.insert(sample_transform(rng));
  CHECK(seen.size() == 6);
  std::vector<RasterImage> patches{noise_image(5, 5, 1), noise_image(5, 5, 2)};
  CHECK(augment_node_patches(patches, 4) == augment_node_patches(patches, 4));
}

TEST_CASE("graph without augmentation seed equals the plain pipeline") {
  const RasterImage img = noise_image(24, 24, 16);
  PatchParams pp;
  pp.patch_size = 8;
  pp.patch_stride = 8;
  const SuperpixelMap sp = stripe_map(24, 24, 3);
  const auto a = build_tissue_graph(img, sp, DefaultEncoder{}, std::nullopt, pp);
  const auto b = build_tissue_graph(img, sp, DefaultEncoder{}, std::nullopt, pp, std::nullopt);
  CHECK(a == b);
  const auto c = build_tissue_graph(img, sp, DefaultEncoder{}, std::nullopt, pp, 99);
  CHECK(c.edges == a.edges);
  CHECK(c.centroids == a.centroids);
}
