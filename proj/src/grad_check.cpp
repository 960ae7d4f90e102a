#include "nesy/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "nesy/error.hpp"

namespace nesy {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate_at(Graph& graph, NodeId root, double& slot, double x) {
  slot = x;
  graph.forward();
  return {graph.value(root).item(), graph.branch_signature()};
}

}  // namespace

GradCheckResult grad_check(Graph& graph, NodeId root, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw DomainError("grad_check epsilon must be in (0, 1e-2]");
  graph.forward();
  const double base_value = graph.value(root).item();
  const std::uint64_t base_sig = graph.branch_signature();
  const auto analytic = gradients_by_parameter(graph, graph.backward(root));

  // Central differences cannot resolve gradients much below roundoff of the
  // root value divided by the step.
  const double resolution =
      1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base_value)) / epsilon;

  GradCheckResult result;
  for (const auto& [param, grad] : analytic) {
    auto data = param->value.data();
    std::vector<double> numeric(data.size(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double original = data[i];
      std::optional<double> estimate;
      for (double h : {epsilon, epsilon * 1e-2}) {
        const Probe plus = evaluate_at(graph, root, data[i], original + h);
        const Probe minus = evaluate_at(graph, root, data[i], original - h);
        if (plus.signature == base_sig && minus.signature == base_sig) {
          estimate = (plus.value - minus.value) / (2.0 * h);
          break;
        }
        if (h != epsilon) {
          if (plus.signature == base_sig)
            estimate = (plus.value - base_value) / h;
          else if (minus.signature == base_sig)
            estimate = (base_value - minus.value) / h;
        }
      }
      data[i] = original;
      if (estimate) {
        numeric[i] = *estimate;
      } else {
        numeric[i] = grad[i];
        ++result.skipped;
      }
    }
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (grad[i] - numeric[i]) * (grad[i] - numeric[i]);
      ref += numeric[i] * numeric[i];
    }
    const double denom = std::max({1e-8, std::sqrt(ref), resolution});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff) / denom);
  }
  graph.forward();
  return result;
}

}  // namespace nesy
