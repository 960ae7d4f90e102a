#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nesy/graph.hpp"

namespace nesy {

enum class OptimizerKind { sgd, adam };

// First-order optimizer. step() always moves parameters by +lr * direction;
// callers minimizing a loss pass the negated gradient.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  // Refuses the whole step (no parameter touched) if any gradient is
  // non-finite or misaligned with its parameter.
  void step(std::span<const ParameterPtr> params, std::span<const Tensor> grads);
  // Convenience for the output of gradients_by_parameter(). `sign` is +1 for
  // ascent, -1 for descent.
  void step(const std::vector<std::pair<ParameterPtr, Tensor>>& grads, double sign = 1.0);

  OptimizerKind kind() const noexcept { return kind_; }
  double learning_rate() const noexcept { return lr_; }
  std::uint64_t steps() const noexcept { return steps_; }

  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace nesy
