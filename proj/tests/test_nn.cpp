#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tissueseg/errors.hpp"
#include "tissueseg/model.hpp"
#include "tissueseg/optimizer.hpp"
#include "tissueseg/tape.hpp"

using namespace tissueseg;
using namespace tissueseg::testing;

namespace {

ModelConfig small_config(std::size_t feature_dim, std::size_t layers) {
  ModelConfig c;
  c.input_dim = feature_dim + 2;
  c.hidden = 6;
  c.layers = layers;
  c.head_hidden = 7;
  return c;
}

LinearVars identity_layer(Tape& tape, std::size_t n) {
  return {tape.leaf(Matrix::identity(n)), tape.leaf(Matrix(1, n))};
}

TissueGraph labelled_graph(std::uint64_t seed, std::size_t nodes, std::size_t dim) {
  Rng rng(seed);
  TissueGraph g = random_graph(rng, nodes, dim, 0.5);
  g.image_label = make_label(Pattern::G4, Pattern::G3);
  for (std::size_t v = 0; v < nodes; ++v) g.node_labels[v] = v % 3 == 2 ? kUnlabeled : static_cast<int>(v % 4);
  return g;
}

}  // namespace

TEST_CASE("identity affine layer returns its input") {
  Tape tape;
  const Matrix x(3, 2, {1, -2, 3.5, 0, -1, 4});
  const Var y = mlp_forward(tape, tape.leaf(x), {identity_layer(tape, 2)}, 0.0, DropoutContext{});
  CHECK(tape.value(y) == x);
}

TEST_CASE("relu between identity layers clips negatives") {
  Tape tape;
  const Var y = mlp_forward(tape, tape.leaf(Matrix(1, 2, {1, -2})),
                            {identity_layer(tape, 2), identity_layer(tape, 2)}, 0.0, DropoutContext{});
  CHECK(tape.value(y) == Matrix(1, 2, {1, 0}));
}

TEST_CASE("inverted dropout preserves the expected activation") {
  Rng init(5);
  const Matrix w0 = random_matrix(init, 4, 3, 0.1, 1.0);
  const Matrix w1 = random_matrix(init, 2, 4, 0.1, 1.0);
  const Matrix x(1, 3, {0.5, 1.0, 1.5});
  auto run = [&](DropoutContext drop) {
    Tape tape;
    MlpVars layers{{tape.leaf(w0), tape.leaf(Matrix(1, 4))}, {tape.leaf(w1), tape.leaf(Matrix(1, 2))}};
    return tape.value(mlp_forward(tape, tape.leaf(x), layers, 0.5, drop));
  };
  const Matrix reference = run(DropoutContext{});
  CHECK(run(DropoutContext{}) == reference);
  Matrix mean(1, 2);
  const int trials = 10000;
  for (int s = 0; s < trials; ++s) {
    Rng rng(static_cast<std::uint64_t>(s));
    const Matrix y = run(DropoutContext{&rng});
    for (std::size_t k = 0; k < 2; ++k) mean(0, k) += y(0, k) / trials;
  }
  for (std::size_t k = 0; k < 2; ++k) CHECK(std::fabs(mean(0, k) - reference(0, k)) <= 0.05 * std::fabs(reference(0, k)));
}

TEST_CASE("mlp rejects mismatched shapes") {
  Tape tape;
  CHECK_THROWS_AS(mlp_forward(tape, tape.leaf(Matrix(1, 3)), {identity_layer(tape, 2)}, 0.0, DropoutContext{}),
                  UsageError);
}

TEST_CASE("gin layer on a path graph") {
  Tape tape;
  const std::vector<std::vector<int>> nb{{1}, {0, 2}, {1}};
  const Var out = gin_layer(tape, tape.leaf(Matrix(3, 1, {2, 4, 6})), nb, {identity_layer(tape, 1)}, 0.0,
                            DropoutContext{});
  CHECK(tape.value(out) == Matrix(3, 1, {6, 8, 10}));
}

TEST_CASE("isolated node passes through an identity gin layer") {
  Tape tape;
  const Matrix x(2, 2, {1.5, -3, 7, 2});
  const Var out = gin_layer(tape, tape.leaf(x), {{}, {}}, {identity_layer(tape, 2)}, 0.0, DropoutContext{});
  CHECK(tape.value(out) == x);
}

TEST_CASE("gin layer is permutation equivariant") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(15);
    const auto edges = random_edges(rng, n, 0.3);
    const Matrix h = random_matrix(rng, n, 3);
    const Matrix w0 = random_matrix(rng, 5, 3), b0 = random_matrix(rng, 1, 5);
    const Matrix w1 = random_matrix(rng, 4, 5), b1 = random_matrix(rng, 1, 4);
    std::vector<int> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<Edge> pedges;
    for (const auto& [a, b] : edges) pedges.emplace_back(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]);
    Matrix ph(n, 3);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t k = 0; k < 3; ++k) ph(static_cast<std::size_t>(perm[v]), k) = h(v, k);
    }
    auto run = [&](const Matrix& x, const std::vector<Edge>& e) {
      Tape tape;
      MlpVars m{{tape.leaf(w0), tape.leaf(b0)}, {tape.leaf(w1), tape.leaf(b1)}};
      return tape.value(gin_layer(tape, tape.leaf(x), neighbor_lists(n, e), m, 0.0, DropoutContext{}));
    };
    const Matrix a = run(h, edges);
    const Matrix b = run(ph, pedges);
    double err = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t k = 0; k < 4; ++k) err = std::max(err, std::fabs(a(v, k) - b(static_cast<std::size_t>(perm[v]), k)));
    }
    CHECK(err <= 1e-12);
  }
}

TEST_CASE("one-layer backbone equals a single gin layer") {
  Tape tape;
  Rng rng(2);
  const Matrix x = random_matrix(rng, 4, 3);
  const std::vector<std::vector<int>> nb{{1}, {0, 2}, {1, 3}, {2}};
  MlpVars m{{tape.leaf(random_matrix(rng, 5, 3)), tape.leaf(random_matrix(rng, 1, 5))}};
  const Var in = tape.leaf(x);
  const Var a = backbone_forward(tape, in, nb, {m}, 0.0, DropoutContext{});
  const Var b = gin_layer(tape, in, nb, m, 0.0, DropoutContext{});
  CHECK(tape.value(a) == tape.value(b));
}

TEST_CASE("backbone width is layers times hidden") {
  ModelConfig c;
  c.input_dim = 5;
  c.layers = 3;
  c.hidden = 64;
  const GinModel model(c, 1);
  Rng rng(3);
  const TissueGraph g = random_graph(rng, 7, 3);
  CHECK(model.predict(g).embeddings.cols() == 192);
  CHECK(model.predict(g).embeddings.rows() == 7);
}

TEST_CASE("backbone matches the loop-level reference") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 40);
    const TissueGraph g = random_graph(rng, 5, 4, 0.5);
    const GinModel model(small_config(4, 3), seed);
    const Matrix emb = model.predict(g).embeddings;
    const auto ref = oracle::backbone(model, g);
    double err = 0.0;
    for (std::size_t v = 0; v < 5; ++v) {
      for (std::size_t k = 0; k < emb.cols(); ++k) err = std::max(err, std::fabs(emb(v, k) - ref[v][k]));
    }
    CHECK(err <= 1e-12);
  }
}

TEST_CASE("mean readout") {
  Tape tape;
  CHECK(tape.value(readout_mean(tape, tape.leaf(Matrix(2, 1, {1, 3})))) == Matrix(1, 1, {2}));
  CHECK(tape.value(readout_mean(tape, tape.leaf(Matrix(1, 3, {4, 5, 6})))) == Matrix(1, 3, {4, 5, 6}));
  CHECK(tape.value(readout_mean(tape, tape.leaf(Matrix(3, 1, {1, 2, 4})))) ==
        tape.value(readout_mean(tape, tape.leaf(Matrix(3, 1, {4, 1, 2})))));
  CHECK_THROWS_AS(readout_mean(tape, tape.leaf(Matrix(0, 2))), UsageError);
}

TEST_CASE("graph outputs are invariant and node outputs equivariant under relabelling") {
  Rng rng(8);
  const TissueGraph g = random_graph(rng, 9, 3, 0.4);
  const GinModel model(small_config(3, 2), 4);
  std::vector<int> perm{3, 0, 8, 5, 1, 7, 2, 6, 4};
  TissueGraph q = g;
  for (std::size_t v = 0; v < 9; ++v) {
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
  const Prediction a = model.predict(g), b = model.predict(q);
  for (std::size_t k = 0; k < 4; ++k) CHECK(a.prob_primary[k] == doctest::Approx(b.prob_primary[k]).epsilon(1e-12));
  for (std::size_t v = 0; v < 9; ++v) {
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(a.node_probs(v, k) == doctest::Approx(b.node_probs(static_cast<std::size_t>(perm[v]), k)).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero heads give uniform posteriors") {
  GinModel model(small_config(3, 2), 1);
  for (Parameter& p : model.params().all()) {
    if (p.group != ParamGroup::Backbone) p.value.fill(0.0);
  }
  Rng rng(1);
  const Prediction pr = model.predict(random_graph(rng, 4, 3));
  for (double p : pr.prob_primary) CHECK(p == 0.25);
  for (double p : pr.prob_secondary) CHECK(p == 0.25);
  CHECK(pr.node_probs.rows() == 4);
  CHECK(pr.node_probs.cols() == 4);
  for (double p : pr.node_probs.data()) CHECK(p == 0.25);
}

TEST_CASE("one-layer head on a unit vector yields the first weight column") {
  Tape tape;
  const Matrix w(4, 2, {0.3, 9, -1, 9, 2.5, 9, 0, 9});
  const Var y = mlp_forward(tape, tape.leaf(Matrix(1, 2, {1, 0})), {{tape.leaf(w), tape.leaf(Matrix(1, 4))}}, 0.5,
                            DropoutContext{});
  CHECK(tape.value(y) == Matrix(1, 4, {0.3, -1, 2.5, 0}));
}

TEST_CASE("constant loss has zero gradients") {
  Tape tape;
  const Var w = tape.leaf(Matrix(2, 2, {1, 2, 3, 4}), true);
  const Var c = tape.leaf(Matrix(1, 1, {5}));
  tape.backward(tape.sum(c));
  CHECK(tape.grad(w) == Matrix(2, 2));
}

TEST_CASE("backward needs a recorded forward pass") {
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{}), UsageError);
  Tape tape;
  const Var w = tape.leaf(Matrix(1, 1, {2}), true);
  CHECK_THROWS_AS(tape.grad(w), UsageError);
  tape.backward(tape.sum(w));
  CHECK_THROWS_AS(tape.backward(tape.sum(w)), UsageError);
}

TEST_CASE("gradients match central differences on a six-node graph") {
  const TissueGraph g = labelled_graph(6, 6, 3);
  const GinModel model(small_config(3, 2), 11);
  const std::vector<double> gw{1.0, 1.4, 0.7, 2.0}, nw{0.5, 1.0, 1.5, 2.0};
  const auto r = oracle::gradient_check(model, g, 0.3, gw, nw);
  CHECK(r.params_with_grad == model.params().size());
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("freezing the backbone leaves head gradients unchanged") {
  const TissueGraph g = labelled_graph(7, 6, 3);
  GinModel model(small_config(3, 2), 12);
  const std::vector<double> w{1, 1, 1, 1};
  auto grads = [&](const GinModel& m) {
    Tape tape;
    const auto bound = m.bind(tape);
    const ForwardVars f = m.forward(tape, bound, g, DropoutContext{});
    tape.backward(tape.add(graph_loss(tape, f.logits_primary, f.logits_secondary, *g.image_label, 0.5, w),
                           node_loss(tape, f.node_logits, g.node_labels, w)));
    std::vector<std::optional<Matrix>> out;
    for (std::size_t i = 0; i < bound.size(); ++i) {
      if (tape.requires_grad(bound[i])) {
        out.emplace_back(tape.grad(bound[i]));
      } else {
        out.emplace_back();
      }
    }
    return out;
  };
  const auto full = grads(model);
  model.params().set_frozen(ParamGroup::Backbone, true);
  const auto frozen = grads(model);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (model.params()[i].group == ParamGroup::Backbone) {
      CHECK_FALSE(frozen[i].has_value());
    } else {
      REQUIRE(frozen[i].has_value());
      CHECK(*frozen[i] == *full[i]);
    }
  }
}

TEST_CASE("forward passes are deterministic") {
  const TissueGraph g = labelled_graph(9, 8, 3);
  const GinModel a(small_config(3, 3), 5), b(small_config(3, 3), 5);
  CHECK(a == b);
  CHECK(a.predict(g).node_probs == b.predict(g).node_probs);
  Rng r1(3), r2(3);
  Tape t1, t2;
  const auto f1 = a.forward(t1, a.bind(t1), g, DropoutContext{&r1});
  const auto f2 = b.forward(t2, b.bind(t2), g, DropoutContext{&r2});
  CHECK(t1.value(f1.node_logits) == t2.value(f2.node_logits));
}

TEST_CASE("optimizer with zero learning rate changes nothing") {
  for (OptimizerMode mode : {OptimizerMode::Adam, OptimizerMode::GradientDescent}) {
    ParameterSet ps;
    ps.add("w", ParamGroup::Backbone, Matrix(2, 2, {1, 2, 3, 4}));
    const ParameterSet before = ps;
    Optimizer opt(mode, 0.0);
    opt.step(ps, {Matrix(2, 2, {0.5, -1, 2, 3})});
    CHECK(ps == before);
  }
}

TEST_CASE("gradient descent on w squared") {
  ParameterSet ps;
  ps.add("w", ParamGroup::Backbone, Matrix(1, 1, {1.0}));
  Optimizer opt(OptimizerMode::GradientDescent, 0.1);
  opt.step(ps, {Matrix(1, 1, {2.0 * ps[0].value(0, 0)})});
  CHECK(ps[0].value(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("first adam step has magnitude lr") {
  Rng rng(4);
  for (double g : {1e-3, -0.5, 7.0, 250.0}) {
    ParameterSet ps;
    ps.add("w", ParamGroup::NodeHead, Matrix(1, 1, {0.3}));
    Optimizer opt(OptimizerMode::Adam, 1e-3);
    opt.step(ps, {Matrix(1, 1, {g})});
    CHECK(std::fabs(std::fabs(ps[0].value(0, 0) - 0.3) - 1e-3) <= 1e-6);
    CHECK((ps[0].value(0, 0) - 0.3) * g < 0.0);
  }
}

TEST_CASE("optimizer leaves frozen groups untouched and rejects negative rates") {
  ParameterSet ps;
  ps.add("a", ParamGroup::Backbone, Matrix(1, 2, {1, 2}));
  ps.add("b", ParamGroup::NodeHead, Matrix(1, 2, {3, 4}));
  ps.set_frozen(ParamGroup::Backbone, true);
  Optimizer opt(OptimizerMode::Adam, 0.1);
  opt.step(ps, {std::nullopt, Matrix(1, 2, {1, 1})});
  CHECK(ps[0].value == Matrix(1, 2, {1, 2}));
  CHECK(ps[1].value != Matrix(1, 2, {3, 4}));
  CHECK_THROWS_AS(Optimizer(OptimizerMode::Adam, -1.0), UsageError);
  CHECK_THROWS_AS(opt.set_lr(-0.1), UsageError);
}
