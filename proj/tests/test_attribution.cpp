#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tissueseg/attribution.hpp"
#include "tissueseg/errors.hpp"

using namespace tissueseg;
using namespace tissueseg::testing;

namespace {

GinModel small_model(std::size_t dim, std::uint64_t seed) {
  ModelConfig c;
  c.input_dim = dim + 2;
  c.hidden = 5;
  c.layers = 2;
  c.head_hidden = 6;
  return GinModel(c, seed);
}

std::vector<double> random_scores(Rng& rng, std::size_t n) {
  std::vector<double> s(n);
  for (double& v : s) v = rng.uniform();
  // Repeated values exercise tie handling.
  if (n > 3 && rng.uniform() < 0.5) s[1] = s[3];
  return s;
}

}  // namespace

TEST_CASE("grad-cam with a channel-0 mean logit is proportional to that channel") {
  const Matrix h(4, 3, {1, 5, 2, 3, 0, 1, 0.5, 2, 2, 4, 1, 1});
  const auto s = graph_grad_cam(h, [](Tape& t, Var x) { return t.select(t.mean_rows(x), 0, 0); });
  for (std::size_t v = 0; v < 4; ++v) CHECK(s[v] == doctest::Approx(h(v, 0) / 4.0).epsilon(1e-15));
}

TEST_CASE("grad-cam of a constant logit is zero") {
  const Matrix h(3, 2, {1, 2, 3, 4, 5, 6});
  const auto s = graph_grad_cam(h, [](Tape& t, Var) { return t.leaf(Matrix(1, 1, {3.0})); });
  for (double v : s) CHECK(v == 0.0);
}

TEST_CASE("grad-cam with a linear head orders nodes by weighted feature sums") {
  const Matrix h(3, 2, {1, 1, 3, 0.5, 0.2, 2});
  const Matrix w(1, 2, {0.7, 0.4});
  const auto s = graph_grad_cam(h, [&](Tape& t, Var x) {
    return t.select(t.mean_rows(t.linear(x, t.leaf(w), t.leaf(Matrix(1, 1)))), 0, 0);
  });
  std::vector<double> sums;
  for (std::size_t v = 0; v < 3; ++v) sums.push_back(h(v, 0) * w(0, 0) + h(v, 1) * w(0, 1));
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK(s[a] == doctest::Approx(sums[a] / 3.0).epsilon(1e-14));
    for (std::size_t b = 0; b < 3; ++b) CHECK((s[a] < s[b]) == (sums[a] < sums[b]));
  }
}

TEST_CASE("model grad-cam matches a finite-difference evaluation of the head") {
  Rng rng(31);
  const TissueGraph g = random_graph(rng, 7, 3, 0.5);
  const GinModel model = small_model(3, 8);
  const auto emb = oracle::backbone(model, g);
  const auto hg = oracle::column_mean(emb);
  for (auto [head, prefix] : {std::pair{GraphHead::Primary, "head.primary"},
                              std::pair{GraphHead::Secondary, "head.secondary"}}) {
    for (Pattern cls : kAllPatterns) {
      const auto k = static_cast<std::size_t>(index_of(cls));
      std::vector<double> alpha(hg.size());
      for (std::size_t c = 0; c < hg.size(); ++c) {
        auto up = hg, down = hg;
        up[c] += 1e-6;
        down[c] -= 1e-6;
        const double d = (oracle::mlp(model.params(), prefix, up)[k] - oracle::mlp(model.params(), prefix, down)[k]) / 2e-6;
        alpha[c] = d / static_cast<double>(g.num_nodes);
      }
      const AttributionMap m = graph_grad_cam(model, g, head, cls);
      CHECK(m.cls == cls);
      for (std::size_t v = 0; v < g.num_nodes; ++v) {
        double s = 0.0;
        for (std::size_t c = 0; c < hg.size(); ++c) s += alpha[c] * emb[v][c];
        CHECK(m.scores[v] >= 0.0);
        CHECK(m.scores[v] == doctest::Approx(std::max(0.0, s)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("grad-cam scores follow a node relabelling") {
  Rng rng(32);
  const TissueGraph g = random_graph(rng, 6, 3, 0.5);
  const GinModel model = small_model(3, 9);
  const std::vector<int> perm{2, 5, 0, 1, 4, 3};
  TissueGraph q = g;
  for (std::size_t v = 0; v < 6; ++v) {
    const auto p = static_cast<std::size_t>(perm[v]);
    for (std::size_t k = 0; k < 3; ++k) q.features(p, k) = g.features(v, k);
    q.centroids(p, 0) = g.centroids(v, 0);
    q.centroids(p, 1) = g.centroids(v, 1);
  }
  q.edges.clear();
  for (const auto& [a, b] : g.edges) {
    const int u = perm[static_cast<std::size_t>(a)], w = perm[static_cast<std::size_t>(b)];
    q.edges.emplace_back(std::min(u, w), std::max(u, w));
  }
  std::sort(q.edges.begin(), q.edges.end());
  const auto a = graph_grad_cam(model, g, GraphHead::Primary, Pattern::G4);
  const auto b = graph_grad_cam(model, q, GraphHead::Primary, Pattern::G4);
  for (std::size_t v = 0; v < 6; ++v) {
    CHECK(a.scores[v] == doctest::Approx(b.scores[static_cast<std::size_t>(perm[v])]).epsilon(1e-12));
  }
}

TEST_CASE("min-max normalisation") {
  const std::vector<double> s{2, 4, 6};
  CHECK(minmax_normalize(s) == std::vector<double>{0, 0.5, 1});
  const std::vector<double> flat{3, 3, 3};
  CHECK(minmax_normalize(flat) == std::vector<double>{0, 0, 0});
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> r;
    for (int k = 0; k < 9; ++k) r.push_back(rng.uniform(-1e3, 1e3));
    for (double v : minmax_normalize(r)) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("selection budget rounds up") {
  CHECK(selection_budget(20, 10) == 2);
  CHECK(selection_budget(10, 33) == 4);
  CHECK(selection_budget(5, 1) == 1);
  CHECK(selection_budget(100, 7) == 7);
}

TEST_CASE("top primary nodes above the threshold") {
  const std::vector<double> ip{0.9, 0.8, 0.6, 0.75, 0.1, 0.2, 0.3, 0.4, 0.5, 0.0};
  const std::vector<double> is{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.65, 0.0, 0.05, 0.69};
  const auto s = synthesize_pseudo_labels(ip, is, make_label(Pattern::G4, Pattern::G3), 20, 0.7);
  CHECK(s.labels[0] == 2);
  CHECK(s.labels[1] == 2);
  CHECK(s.assigned(Pattern::G4) == 2);
  CHECK(s.assigned(Pattern::G3) == 0);
  CHECK(s.assigned() == 2);
}

TEST_CASE("a node selected by both maps goes to the higher score") {
  const std::vector<double> ip{0.8, 0.0, 0.0, 0.0};
  const std::vector<double> is{0.9, 0.0, 0.0, 0.0};
  const auto s = synthesize_pseudo_labels(ip, is, make_label(Pattern::G4, Pattern::G3), 25, 0.5);
  CHECK(s.labels[0] == index_of(Pattern::G3));
  CHECK(s.scores[0] == 0.9);
  const std::vector<double> tie{0.8, 0.0, 0.0, 0.0};
  const auto t = synthesize_pseudo_labels(ip, tie, make_label(Pattern::G4, Pattern::G3), 25, 0.5);
  CHECK(t.labels[0] == index_of(Pattern::G4));
}

TEST_CASE("benign slides label every node benign") {
  const std::vector<double> ip{0.1, 0.9, 0.0}, is{1.0, 0.0, 0.3};
  const auto s = synthesize_pseudo_labels(ip, is, make_label(Pattern::B, Pattern::B), 5, 0.7);
  CHECK(s.labels == std::vector<int>{0, 0, 0});
}

TEST_CASE("equal primary and secondary use one candidate set") {
  const std::vector<double> ip{0.9, 0.1, 0.95, 0.2}, is{0.0, 1.0, 0.0, 1.0};
  const auto s = synthesize_pseudo_labels(ip, is, make_label(Pattern::G5, Pattern::G5), 50, 0.5);
  CHECK(s.labels == std::vector<int>{3, kUnlabeled, 3, kUnlabeled});
}

TEST_CASE("ties within a map keep the lower node id") {
  const std::vector<double> ip{0.8, 0.9, 0.9, 0.9}, is{0, 0, 0, 0};
  const auto s = synthesize_pseudo_labels(ip, is, make_label(Pattern::G3, Pattern::G4), 50, 0.5);
  CHECK(s.labels == std::vector<int>{kUnlabeled, 1, 1, kUnlabeled});
}

TEST_CASE("invalid selection parameters are rejected") {
  const std::vector<double> s{0.5, 0.5};
  const auto y = make_label(Pattern::G3, Pattern::G3);
  CHECK_THROWS_AS(synthesize_pseudo_labels(s, s, y, 0, 0.5), UsageError);
  CHECK_THROWS_AS(synthesize_pseudo_labels(s, s, y, 101, 0.5), UsageError);
  CHECK_THROWS_AS(synthesize_pseudo_labels(s, s, y, 10, 1.0), UsageError);
  CHECK_THROWS_AS(synthesize_pseudo_labels(s, s, y, 10, -0.1), UsageError);
}

TEST_CASE("pseudo-label invariants on random maps") {
  Rng rng(77);
  const Pattern malignant[] = {Pattern::G3, Pattern::G4, Pattern::G5};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    const auto ip = minmax_normalize(random_scores(rng, n));
    const auto is = minmax_normalize(random_scores(rng, n));
    const GleasonLabel y = trial % 10 == 0 ? make_label(Pattern::B, Pattern::B)
                                           : make_label(malignant[rng.below(3)], malignant[rng.below(3)]);
    const double sel = 1 + static_cast<double>(rng.below(100));
    const double t = rng.uniform(0.0, 0.9);
    const auto v = oracle::check_pseudo_labels(ip, is, y, sel, t, t + rng.uniform(0.0, 0.09),
                                               std::min(100.0, sel + static_cast<double>(rng.below(30))));
    CHECK(v.total() == 0);
  }
}

TEST_CASE("pseudo-labelling a graph requires its image label") {
  Rng rng(5);
  TissueGraph g = random_graph(rng, 5, 3);
  const GinModel model = small_model(3, 1);
  CHECK_THROWS_AS(pseudo_label_graph(model, g, 10, 0.6), DataError);
  g.image_label = make_label(Pattern::G4, Pattern::G3);
  const auto s = pseudo_label_graph(model, g, 40, 0.0);
  CHECK(s.labels.size() == 5);
  CHECK(s.assigned() >= 1);
}

TEST_CASE("attribution argmax picks the highest normalised class map") {
  Rng rng(6);
  const TissueGraph g = random_graph(rng, 8, 3, 0.4);
  const GinModel model = small_model(3, 2);
  std::vector<std::vector<double>> maps;
  for (Pattern p : kAllPatterns) maps.push_back(minmax_normalize(graph_grad_cam(model, g, GraphHead::Primary, p).scores));
  const auto labels = attribution_argmax_labels(model, g);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    int best = 0;
    for (int k = 1; k < 4; ++k) {
      if (maps[static_cast<std::size_t>(k)][v] > maps[static_cast<std::size_t>(best)][v]) best = k;
    }
    CHECK(labels[v] == best);
  }
}

TEST_CASE("pseudo-label csv round trip") {
  PseudoLabelSet a;
  a.labels = {2, kUnlabeled, 1};
  a.scores = {0.75, 0.0, 1.0 / 3.0};
  PseudoLabelSet b;
  b.labels = {0};
  b.scores = {0.1};
  const std::string csv = pseudo_labels_to_csv({"0001", "0002"}, {a, b});
  const auto rows = parse_pseudo_label_csv(csv);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].graph_id == "0001");
  CHECK(rows[0].node_id == 0);
  CHECK(rows[0].cls == Pattern::G4);
  CHECK(rows[1].node_id == 2);
  CHECK(rows[1].score == 1.0 / 3.0);
  CHECK(rows[2].graph_id == "0002");
  CHECK(rows[2].cls == Pattern::B);
  CHECK_THROWS_AS(parse_pseudo_label_csv("graph_id,node_id,class,score\nx,1\n"), DataError);
  CHECK_THROWS_AS(parse_pseudo_label_csv("bad header\n"), DataError);
}
