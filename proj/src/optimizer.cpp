#include "nesy/optimizer.hpp"

#include <cmath>

#include "nesy/error.hpp"

namespace nesy {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw DomainError("learning rate must be positive");
}

void Optimizer::step(std::span<const ParameterPtr> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DomainError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != grads[i].shape())
      throw ShapeError(i, "optimizer_step", shape_str(params[i]->value.shape()), shape_str(grads[i].shape()));
    if (!grads[i].all_finite())
      throw NumericError("optimizer: non-finite gradient for '" + params[i]->name + "'; step refused");
  }

  ++steps_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->value.data();
      const auto g = grads[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] += lr_ * g[j];
    }
    return;
  }

  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].shape() != params[i]->value.shape())
      throw ShapeError(i, "adam", shape_str(m_[i].shape()), shape_str(params[i]->value.shape()));
    auto p = params[i]->value.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      p[j] += lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + epsilon);
    }
  }
}

void Optimizer::step(const std::vector<std::pair<ParameterPtr, Tensor>>& grads, double sign) {
  std::vector<ParameterPtr> params;
  std::vector<Tensor> dirs;
  params.reserve(grads.size());
  dirs.reserve(grads.size());
  for (const auto& [p, g] : grads) {
    params.push_back(p);
    Tensor d = g;
    if (sign != 1.0)
      for (double& x : d.data()) x *= sign;
    dirs.push_back(std::move(d));
  }
  step(params, dirs);
}

}  // namespace nesy
