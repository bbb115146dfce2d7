#include "tissueseg/optimizer.hpp"

#include <cmath>
#include <string>

#include "tissueseg/errors.hpp"

namespace tissueseg {

Optimizer::Optimizer(OptimizerMode mode, double lr) : mode_(mode) { set_lr(lr); }

void Optimizer::set_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw UsageError("learning rate must be finite and >= 0, got " + std::to_string(lr));
  }
  lr_ = lr;
}

void Optimizer::step(ParameterSet& params, const std::vector<std::optional<Matrix>>& grads) {
  if (grads.size() != params.size()) throw UsageError("optimizer: gradient count != parameter count");
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const Parameter& p : params.all()) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    if (!grads[i]) throw UsageError("optimizer: missing gradient for " + params[i].name);
    const Matrix& g = *grads[i];
    Matrix& w = params[i].value;
    require_same_shape(w, g, "optimizer");
    if (!g.all_finite()) throw NumericError("non-finite gradient for " + params[i].name);
    if (mode_ == OptimizerMode::GradientDescent) {
      for (std::size_t k = 0; k < w.size(); ++k) w.data()[k] -= lr_ * g.data()[k];
      continue;
    }
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.data()[k];
      m.data()[k] = beta1 * m.data()[k] + (1.0 - beta1) * gk;
      v.data()[k] = beta2 * v.data()[k] + (1.0 - beta2) * gk * gk;
      const double mhat = m.data()[k] / bc1;
      const double vhat = v.data()[k] / bc2;
      w.data()[k] -= lr_ * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace tissueseg
