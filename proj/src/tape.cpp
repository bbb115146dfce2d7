#include "tissueseg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tissueseg/errors.hpp"

namespace tissueseg {

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, std::size_t)> fn) {
  if (backward_done_) throw UsageError("tape already differentiated; record a new tape");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable not recorded on this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable not recorded on this tape");
  return nodes_[v.id];
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

const Matrix& Tape::grad(Var v) const {
  if (!backward_done_) throw UsageError("gradient requested before backward()");
  return node(v).grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::linear(Var x, Var w, Var b) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  if (X.cols() != W.cols() || B.rows() != 1 || B.cols() != W.rows()) {
    throw UsageError("linear: shape mismatch (x " + std::to_string(X.rows()) + "x" +
                     std::to_string(X.cols()) + ", w " + std::to_string(W.rows()) + "x" +
                     std::to_string(W.cols()) + ")");
  }
  const std::size_t n = X.rows();
  const std::size_t in = W.cols();
  const std::size_t out = W.rows();
  Matrix Y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = B(0, o);
      for (std::size_t k = 0; k < in; ++k) acc += X(i, k) * W(o, k);
      Y(i, o) = acc;
    }
  }
  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  return push(std::move(Y), rg, [xi = x.id, wi = w.id, bi = b.id](Tape& t, std::size_t self) {
    const Matrix& G = t.nodes_[self].grad;
    const Matrix& Xv = t.nodes_[xi].value;
    const Matrix& Wv = t.nodes_[wi].value;
    const std::size_t n = Xv.rows();
    const std::size_t in = Wv.cols();
    const std::size_t out = Wv.rows();
    if (t.nodes_[xi].requires_grad) {
      Matrix& gx = t.grad_ref(xi);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
          const double g = G(i, o);
          for (std::size_t k = 0; k < in; ++k) gx(i, k) += g * Wv(o, k);
        }
      }
    }
    if (t.nodes_[wi].requires_grad) {
      Matrix& gw = t.grad_ref(wi);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
          const double g = G(i, o);
          for (std::size_t k = 0; k < in; ++k) gw(o, k) += g * Xv(i, k);
        }
      }
    }
    if (t.nodes_[bi].requires_grad) {
      Matrix& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) gb(0, o) += G(i, o);
      }
    }
  });
}

Var Tape::relu(Var x) {
  Matrix Y = value(x);
  for (double& v : Y.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(Y), requires_grad(x), [xi = x.id](Tape& t, std::size_t self) {
    const Matrix& G = t.nodes_[self].grad;
    const Matrix& X = t.nodes_[xi].value;
    Matrix& gx = t.grad_ref(xi);
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (X.data()[i] > 0.0) gx.data()[i] += G.data()[i];
    }
  });
}

Var Tape::mask_multiply(Var x, Matrix mask) {
  require_same_shape(value(x), mask, "mask_multiply");
  Matrix Y = value(x);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data()[i] *= mask.data()[i];
  return push(std::move(Y), requires_grad(x),
              [xi = x.id, m = std::move(mask)](Tape& t, std::size_t self) {
                const Matrix& G = t.nodes_[self].grad;
                Matrix& gx = t.grad_ref(xi);
                for (std::size_t i = 0; i < G.size(); ++i) gx.data()[i] += G.data()[i] * m.data()[i];
              });
}

Var Tape::add_neighbor_mean(Var h, const std::vector<std::vector<int>>& neighbors) {
  const Matrix& H = value(h);
  if (neighbors.size() != H.rows()) throw UsageError("add_neighbor_mean: adjacency size != rows");
  const std::size_t c = H.cols();
  Matrix Y = H;
  for (std::size_t v = 0; v < neighbors.size(); ++v) {
    const auto& nb = neighbors[v];
    if (nb.empty()) continue;
    const double inv = 1.0 / static_cast<double>(nb.size());
    for (std::size_t k = 0; k < c; ++k) {
      double acc = 0.0;
      for (int u : nb) acc += H(static_cast<std::size_t>(u), k);
      Y(v, k) += acc * inv;
    }
  }
  return push(std::move(Y), requires_grad(h), [hi = h.id, neighbors](Tape& t, std::size_t self) {
    const Matrix& G = t.nodes_[self].grad;
    Matrix& gh = t.grad_ref(hi);
    const std::size_t c = G.cols();
    for (std::size_t v = 0; v < neighbors.size(); ++v) {
      for (std::size_t k = 0; k < c; ++k) gh(v, k) += G(v, k);
      const auto& nb = neighbors[v];
      if (nb.empty()) continue;
      const double inv = 1.0 / static_cast<double>(nb.size());
      for (int u : nb) {
        for (std::size_t k = 0; k < c; ++k) gh(static_cast<std::size_t>(u), k) += G(v, k) * inv;
      }
    }
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t n = value(parts[0]).rows();
  std::size_t total = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    if (value(p).rows() != n) throw UsageError("concat_cols: row mismatch");
    total += value(p).cols();
    rg = rg || requires_grad(p);
    ids.push_back(p.id);
  }
  Matrix Y(n, total);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& P = value(p);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < P.cols(); ++k) Y(i, offset + k) = P(i, k);
    }
    offset += P.cols();
  }
  return push(std::move(Y), rg, [ids](Tape& t, std::size_t self) {
    const Matrix& G = t.nodes_[self].grad;
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t cols = t.nodes_[id].value.cols();
      if (t.nodes_[id].requires_grad) {
        Matrix& gp = t.grad_ref(id);
        for (std::size_t i = 0; i < G.rows(); ++i) {
          for (std::size_t k = 0; k < cols; ++k) gp(i, k) += G(i, offset + k);
        }
      }
      offset += cols;
    }
  });
}

Var Tape::mean_rows(Var x) {
  const Matrix& X = value(x);
  if (X.rows() == 0) throw UsageError("mean_rows: empty input");
  Matrix Y(1, X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t k = 0; k < X.cols(); ++k) Y(0, k) += X(i, k);
  }
  const double inv = 1.0 / static_cast<double>(X.rows());
  for (double& v : Y.data()) v *= inv;
  return push(std::move(Y), requires_grad(x), [xi = x.id](Tape& t, std::size_t self) {
    const Matrix& G = t.nodes_[self].grad;
    Matrix& gx = t.grad_ref(xi);
    const double inv = 1.0 / static_cast<double>(gx.rows());
    for (std::size_t i = 0; i < gx.rows(); ++i) {
      for (std::size_t k = 0; k < gx.cols(); ++k) gx(i, k) += G(0, k) * inv;
    }
  });
}

Var Tape::select(Var x, std::size_t row, std::size_t col) {
  const Matrix& X = value(x);
  if (row >= X.rows() || col >= X.cols()) throw UsageError("select: index out of range");
  return push(Matrix(1, 1, X(row, col)), requires_grad(x),
              [xi = x.id, row, col](Tape& t, std::size_t self) {
                t.grad_ref(xi)(row, col) += t.nodes_[self].grad(0, 0);
              });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Matrix Y = value(a);
  const Matrix& B = value(b);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data()[i] += B.data()[i];
  return push(std::move(Y), requires_grad(a) || requires_grad(b),
              [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
                const Matrix& G = t.nodes_[self].grad;
                for (std::size_t id : {ai, bi}) {
                  if (!t.nodes_[id].requires_grad) continue;
                  Matrix& g = t.grad_ref(id);
                  for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i];
                }
              });
}

Var Tape::scale(Var a, double s) {
  Matrix Y = value(a);
  for (double& v : Y.data()) v *= s;
  return push(std::move(Y), requires_grad(a), [ai = a.id, s](Tape& t, std::size_t self) {
    const Matrix& G = t.nodes_[self].grad;
    Matrix& g = t.grad_ref(ai);
    for (std::size_t i = 0; i < G.size(); ++i) g.data()[i] += G.data()[i] * s;
  });
}

Var Tape::sum(Var a) {
  double acc = 0.0;
  for (double v : value(a).data()) acc += v;
  return push(Matrix(1, 1, acc), requires_grad(a), [ai = a.id](Tape& t, std::size_t self) {
    const double g = t.nodes_[self].grad(0, 0);
    for (double& v : t.grad_ref(ai).data()) v += g;
  });
}

Var Tape::weighted_cross_entropy(Var logits, std::span<const int> targets,
                                 std::span<const double> class_weights, double normalizer) {
  const Matrix& L = value(logits);
  if (targets.size() != L.rows()) throw UsageError("weighted_cross_entropy: target count != rows");
  if (class_weights.size() != L.cols()) throw UsageError("weighted_cross_entropy: weight count != classes");
  if (!(normalizer > 0.0)) throw UsageError("weighted_cross_entropy: normalizer must be > 0");
  const std::size_t k = L.cols();
  Matrix probs(L.rows(), k);
  double loss = 0.0;
  for (std::size_t i = 0; i < L.rows(); ++i) {
    double mx = L(i, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, L(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(L(i, c) - mx);
    for (std::size_t c = 0; c < k; ++c) probs(i, c) = std::exp(L(i, c) - mx) / z;
    const int tgt = targets[i];
    if (tgt < 0) continue;
    if (static_cast<std::size_t>(tgt) >= k) throw UsageError("weighted_cross_entropy: target out of range");
    const double log_p = L(i, static_cast<std::size_t>(tgt)) - mx - std::log(z);
    loss += -class_weights[static_cast<std::size_t>(tgt)] * log_p;
  }
  loss /= normalizer;
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> w(class_weights.begin(), class_weights.end());
  return push(Matrix(1, 1, loss), requires_grad(logits),
              [li = logits.id, tg = std::move(tg), w = std::move(w), probs = std::move(probs),
               normalizer](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad(0, 0);
                Matrix& gl = t.grad_ref(li);
                for (std::size_t i = 0; i < tg.size(); ++i) {
                  if (tg[i] < 0) continue;
                  const double coef = g * w[static_cast<std::size_t>(tg[i])] / normalizer;
                  for (std::size_t c = 0; c < probs.cols(); ++c) {
                    const double onehot = static_cast<int>(c) == tg[i] ? 1.0 : 0.0;
                    gl(i, c) += coef * (probs(i, c) - onehot);
                  }
                }
              });
}

void Tape::backward(Var target) {
  if (nodes_.empty()) throw UsageError("backward called on an empty tape (no forward recorded)");
  if (backward_done_) throw UsageError("backward already called on this tape");
  const Node& t = node(target);
  if (t.value.rows() != 1 || t.value.cols() != 1) throw UsageError("backward target must be 1x1");
  for (Node& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  backward_done_ = true;
  nodes_[target.id].grad(0, 0) = 1.0;
  for (std::size_t id = target.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.backward) n.backward(*this, id);
  }
}

}  // namespace tissueseg
