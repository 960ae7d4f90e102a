#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nesy/tensor.hpp"

namespace nesy {

using NodeId = std::size_t;

// A named tensor shared between graphs. Several graph nodes may reference the
// same Parameter; their gradients are summed by gradients_by_parameter().
struct Parameter {
  Parameter(std::string name, Tensor value, bool trainable = true)
      : name(std::move(name)), value(std::move(value)), trainable(trainable) {}

  std::string name;
  Tensor value;
  bool trainable = true;
};
using ParameterPtr = std::shared_ptr<Parameter>;

enum class OpKind {
  placeholder,
  constant,
  parameter,
  add,
  sub,
  mul,
  affine,
  matmul,
  add_bias,
  relu,
  sigmoid,
  log,
  pow,
  clamp,
  softmax,
  mean,
  sum,
  conv2d,
  max_pool2,
  reshape,
  select_column,
  expand,
  concat,
  unary,
  binary,
  reduce_last,
};

const char* op_name(OpKind op);

// Elementwise scalar kernels for ops defined outside the core op set. The same
// kernel object serves the plain-value and graph forms of an operation, so
// both produce identical bits.
class UnaryKernel {
 public:
  virtual ~UnaryKernel() = default;
  virtual const char* name() const = 0;
  virtual double value(double x) const = 0;
  virtual double derivative(double x, double y) const = 0;
  // Identifies the smooth piece x lies on, for kink-aware gradient checking.
  virtual int branch(double) const { return 0; }
};

class BinaryKernel {
 public:
  virtual ~BinaryKernel() = default;
  virtual const char* name() const = 0;
  virtual double value(double a, double b) const = 0;
  virtual void partials(double a, double b, double y, double& da, double& db) const = 0;
  virtual int branch(double, double) const { return 0; }
};

// Reduces one row (the last axis) to a scalar.
class ReduceKernel {
 public:
  virtual ~ReduceKernel() = default;
  virtual const char* name() const = 0;
  virtual double value(std::span<const double> row) const = 0;
  // Writes d(value)/d(row[i]) into d_row.
  virtual void gradient(std::span<const double> row, double y, std::span<double> d_row) const = 0;
};

using Feeds = std::map<NodeId, Tensor>;
using Gradients = std::map<NodeId, Tensor>;

// Append-only computation graph. Nodes are evaluated eagerly as they are
// added; forward() re-evaluates every node in insertion order (which is a
// topological order) after replacing placeholder values.
//
// Single writer. Shape errors are raised at construction and on feeding.
class Graph {
 public:
  NodeId placeholder(Shape shape, std::string name = {});
  NodeId constant(Tensor value);
  NodeId parameter(ParameterPtr p);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  // scale * a + shift, elementwise.
  NodeId affine(NodeId a, double scale, double shift);
  NodeId matmul(NodeId a, NodeId b);
  // x[..., k] + bias[k]
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  // log(max(a, 1e-12))
  NodeId log(NodeId a);
  NodeId pow(NodeId a, double exponent);
  NodeId clamp(NodeId a, double lo, double hi);
  // Softmax over the last axis.
  NodeId softmax(NodeId a);
  NodeId mean(NodeId a);
  NodeId sum(NodeId a);
  // NHWC input [n,h,w,c], weights [3,3,c,k]; stride 1, zero "same" padding.
  NodeId conv2d(NodeId x, NodeId w);
  // 2x2 max pooling, stride 2, on NHWC input.
  NodeId max_pool2(NodeId x);
  NodeId reshape(NodeId a, Shape shape);
  // [n,k] -> [n]
  NodeId select_column(NodeId a, std::size_t column);
  // Broadcast: input axis i maps to output axis axes[i] (strictly increasing);
  // other output axes repeat the input.
  NodeId expand(NodeId a, Shape out_shape, std::vector<std::size_t> axes);
  // Flattens and concatenates into a vector.
  NodeId concat(const std::vector<NodeId>& parts);
  NodeId unary(NodeId a, std::shared_ptr<const UnaryKernel> kernel);
  NodeId binary(NodeId a, NodeId b, std::shared_ptr<const BinaryKernel> kernel);
  NodeId reduce_last(NodeId a, std::shared_ptr<const ReduceKernel> kernel);

  void forward(const Feeds& feeds = {});
  // Gradient of a scalar root w.r.t. every trainable parameter node. Nodes the
  // root does not depend on get a zero tensor.
  Gradients backward(NodeId root) const;

  const Tensor& value(NodeId id) const;
  const Shape& shape(NodeId id) const { return value(id).shape(); }
  OpKind op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_.at(id).in; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const ParameterPtr& parameter_of(NodeId id) const;
  std::vector<NodeId> parameter_nodes(bool trainable_only = true) const;
  std::vector<NodeId> placeholders() const;

  // Hash of the active piece of every piecewise op (relu sign, pooling
  // argmax, clamp region, kernel branch) at the last evaluation.
  std::uint64_t branch_signature() const;

 private:
  struct Node {
    OpKind op = OpKind::constant;
    std::vector<NodeId> in;
    Tensor value;
    ParameterPtr param;
    double a = 0.0;
    double b = 0.0;
    std::vector<std::size_t> aux;
    std::shared_ptr<const UnaryKernel> unary;
    std::shared_ptr<const BinaryKernel> binary;
    std::shared_ptr<const ReduceKernel> reduce;
    std::string name;
  };

  static Node make_node(OpKind op, std::vector<NodeId> in, Shape out);
  NodeId push(Node node);
  void check_id(NodeId id) const;
  void evaluate(NodeId id);
  void accumulate(const Node& node, NodeId id, const Tensor& gy, std::vector<Tensor>& grads,
                  const std::vector<char>& needs) const;
  [[noreturn]] void shape_fail(const char* op, const std::string& expected, const Shape& actual) const;

  std::vector<Node> nodes_;
};

// Sums node gradients per shared Parameter, in first-appearance order.
std::vector<std::pair<ParameterPtr, Tensor>> gradients_by_parameter(const Graph& graph,
                                                                    const Gradients& grads);

}  // namespace nesy
