#pragma once

#include "nesy/graph.hpp"

namespace nesy {

struct GradCheckResult {
  double max_relative_error = 0.0;
  // Parameter elements whose perturbation crossed a kink (relu at 0, pooling
  // tie, clamp edge) on both sides, so no difference quotient was usable.
  std::size_t skipped = 0;
};

// Compares backward() against central differences of the root value, one
// parameter element at a time. The error of a parameter tensor is
// ||autodiff - fd||_2 / max(1e-8, ||fd||_2, r), where r = 1e4 * eps_machine *
// max(1, |root|) / epsilon is the resolution limit of the difference quotient;
// the result is the maximum over trainable parameters. When a perturbation changes the graph's active branch
// the step shrinks by 100x, then falls back to a one-sided difference.
//
// Leaves parameter values and the graph's cached values as they were.
GradCheckResult grad_check(Graph& graph, NodeId root, double epsilon = 1e-5);

}  // namespace nesy
