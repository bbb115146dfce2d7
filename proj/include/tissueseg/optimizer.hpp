#pragma once

#include <optional>
#include <vector>

#include "tissueseg/matrix.hpp"
#include "tissueseg/model.hpp"

namespace tissueseg {

enum class OptimizerMode { Adam, GradientDescent };

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain gradient descent.
// Frozen parameter groups are never touched; their moments stay as-is.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerMode mode, double lr);

  OptimizerMode mode() const { return mode_; }
  double lr() const { return lr_; }
  void set_lr(double lr);
  long step_count() const { return step_; }

  // grads[i] corresponds to params[i]; entries for frozen groups are ignored
  // and may be empty.
  void step(ParameterSet& params, const std::vector<std::optional<Matrix>>& grads);

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Exposed for checkpointing.
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_step_count(long s) { step_ = s; }

  bool operator==(const Optimizer&) const = default;

 private:
  OptimizerMode mode_ = OptimizerMode::Adam;
  double lr_ = 1e-3;
  long step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace tissueseg
