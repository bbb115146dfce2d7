#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tissueseg/matrix.hpp"

namespace tissueseg {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode differentiation over the handful of matrix ops the models
// need. Nodes are appended in evaluation order, so reverse id order is a
// valid topological order for backward(). A tape is single-use: record a
// forward pass, call backward once, read gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf values. Only leaves created with requires_grad get gradients, and
  // only ops depending on them are differentiated.
  Var leaf(Matrix value, bool requires_grad = false);

  const Matrix& value(Var v) const;
  // Gradient of the last backward() target; zero matrix when unreachable.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // x (n x in) * w^T (w: out x in) + b (1 x out), broadcast over rows.
  Var linear(Var x, Var w, Var b);
  Var relu(Var x);
  // Elementwise product with a constant mask (inverted dropout).
  Var mask_multiply(Var x, Matrix mask);
  // h(v) + mean_{u in N(v)} h(u); empty neighbourhoods contribute zero.
  Var add_neighbor_mean(Var h, const std::vector<std::vector<int>>& neighbors);
  Var concat_cols(std::span<const Var> parts);
  // Column-wise mean, 1 x cols.
  Var mean_rows(Var x);
  // Single entry as 1 x 1.
  Var select(Var x, std::size_t row, std::size_t col);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  Var sum(Var a);
  // sum_i w[t_i] * -log softmax(logits_i)[t_i] / normalizer over rows with
  // t_i >= 0; rows with a negative target are skipped.
  Var weighted_cross_entropy(Var logits, std::span<const int> targets,
                             std::span<const double> class_weights, double normalizer);

  // Reverse accumulation from a 1 x 1 target.
  void backward(Var target);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Matrix value, bool requires_grad, std::function<void(Tape&, std::size_t)> fn);
  Node& node(Var v);
  const Node& node(Var v) const;
  Matrix& grad_ref(std::size_t id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace tissueseg
