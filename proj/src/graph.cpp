#include "nesy/graph.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "nesy/error.hpp"

namespace nesy {

namespace {

constexpr double kLogFloor = 1e-12;

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::placeholder: return "placeholder";
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::affine: return "affine";
    case OpKind::matmul: return "matmul";
    case OpKind::add_bias: return "add_bias";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::log: return "log";
    case OpKind::pow: return "pow";
    case OpKind::clamp: return "clamp";
    case OpKind::softmax: return "softmax";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::conv2d: return "conv2d";
    case OpKind::max_pool2: return "max_pool2";
    case OpKind::reshape: return "reshape";
    case OpKind::select_column: return "select_column";
    case OpKind::expand: return "expand";
    case OpKind::concat: return "concat";
    case OpKind::unary: return "unary";
    case OpKind::binary: return "binary";
    case OpKind::reduce_last: return "reduce_last";
  }
  return "?";
}

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw NotFound("graph has no node " + std::to_string(id));
}

void Graph::shape_fail(const char* op, const std::string& expected, const Shape& actual) const {
  throw ShapeError(nodes_.size(), op, expected, shape_str(actual));
}

const Tensor& Graph::value(NodeId id) const {
  check_id(id);
  const Node& n = nodes_[id];
  return n.op == OpKind::parameter ? n.param->value : n.value;
}

const ParameterPtr& Graph::parameter_of(NodeId id) const {
  check_id(id);
  if (nodes_[id].op != OpKind::parameter) throw NotFound("node " + std::to_string(id) + " is not a parameter");
  return nodes_[id].param;
}

std::vector<NodeId> Graph::parameter_nodes(bool trainable_only) const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == OpKind::parameter && (!trainable_only || nodes_[i].param->trainable)) out.push_back(i);
  }
  return out;
}

std::vector<NodeId> Graph::placeholders() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op == OpKind::placeholder) out.push_back(i);
  return out;
}

NodeId Graph::push(Node node) {
  for (NodeId p : node.in) check_id(p);
  nodes_.push_back(std::move(node));
  const NodeId id = nodes_.size() - 1;
  evaluate(id);
  return id;
}

// ---- construction ----------------------------------------------------------

NodeId Graph::placeholder(Shape shape, std::string name) {
  Node n;
  n.op = OpKind::placeholder;
  n.value = Tensor(std::move(shape));
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = OpKind::constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(ParameterPtr p) {
  if (!p) throw DomainError("null parameter");
  Node n;
  n.op = OpKind::parameter;
  n.param = std::move(p);
  n.name = n.param->name;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Graph::Node Graph::make_node(OpKind op, std::vector<NodeId> in, Shape out) {
  Node n;
  n.op = op;
  n.in = std::move(in);
  n.value = Tensor(std::move(out));
  return n;
}

NodeId Graph::add(NodeId a, NodeId b) {
  if (shape(a) != shape(b)) shape_fail("add", shape_str(shape(a)), shape(b));
  return push(make_node(OpKind::add, {a, b}, shape(a)));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  if (shape(a) != shape(b)) shape_fail("sub", shape_str(shape(a)), shape(b));
  return push(make_node(OpKind::sub, {a, b}, shape(a)));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  if (shape(a) != shape(b)) shape_fail("mul", shape_str(shape(a)), shape(b));
  return push(make_node(OpKind::mul, {a, b}, shape(a)));
}

NodeId Graph::affine(NodeId a, double scale, double shift) {
  Node n = make_node(OpKind::affine, {a}, shape(a));
  n.a = scale;
  n.b = shift;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (sa.size() != 2) shape_fail("matmul", "rank-2 left operand", sa);
  if (sb.size() != 2 || sb[0] != sa[1]) shape_fail("matmul", "[" + std::to_string(sa[1]) + ",*]", sb);
  return push(make_node(OpKind::matmul, {a, b}, {sa[0], sb[1]}));
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  const Shape& sx = shape(x);
  const Shape& sb = shape(bias);
  if (sx.empty()) shape_fail("add_bias", "rank >= 1 input", sx);
  if (sb.size() != 1 || sb[0] != sx.back()) shape_fail("add_bias", "[" + std::to_string(sx.back()) + "]", sb);
  return push(make_node(OpKind::add_bias, {x, bias}, sx));
}

NodeId Graph::relu(NodeId a) { return push(make_node(OpKind::relu, {a}, shape(a))); }
NodeId Graph::sigmoid(NodeId a) { return push(make_node(OpKind::sigmoid, {a}, shape(a))); }
NodeId Graph::log(NodeId a) { return push(make_node(OpKind::log, {a}, shape(a))); }

NodeId Graph::pow(NodeId a, double exponent) {
  Node n = make_node(OpKind::pow, {a}, shape(a));
  n.a = exponent;
  return push(std::move(n));
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp bounds out of order");
  Node n = make_node(OpKind::clamp, {a}, shape(a));
  n.a = lo;
  n.b = hi;
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId a) {
  if (shape(a).empty()) shape_fail("softmax", "rank >= 1 input", shape(a));
  return push(make_node(OpKind::softmax, {a}, shape(a)));
}

NodeId Graph::mean(NodeId a) { return push(make_node(OpKind::mean, {a}, {})); }
NodeId Graph::sum(NodeId a) { return push(make_node(OpKind::sum, {a}, {})); }

NodeId Graph::conv2d(NodeId x, NodeId w) {
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  if (sx.size() != 4) shape_fail("conv2d", "[n,h,w,c]", sx);
  if (sw.size() != 4 || sw[0] != 3 || sw[1] != 3 || sw[2] != sx[3])
    shape_fail("conv2d", "[3,3," + std::to_string(sx[3]) + ",k]", sw);
  return push(make_node(OpKind::conv2d, {x, w}, {sx[0], sx[1], sx[2], sw[3]}));
}

NodeId Graph::max_pool2(NodeId x) {
  const Shape& sx = shape(x);
  if (sx.size() != 4 || sx[1] < 2 || sx[2] < 2) shape_fail("max_pool2", "[n,h>=2,w>=2,c]", sx);
  Node n = make_node(OpKind::max_pool2, {x}, {sx[0], sx[1] / 2, sx[2] / 2, sx[3]});
  n.aux.assign(shape_size(n.value.shape()), 0);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, Shape s) {
  if (shape_size(s) != shape_size(shape(a))) shape_fail("reshape", "size " + std::to_string(shape_size(s)), shape(a));
  return push(make_node(OpKind::reshape, {a}, std::move(s)));
}

NodeId Graph::select_column(NodeId a, std::size_t column) {
  const Shape& sa = shape(a);
  if (sa.size() != 2 || column >= sa[1]) shape_fail("select_column", "[n,>" + std::to_string(column) + "]", sa);
  Node n = make_node(OpKind::select_column, {a}, {sa[0]});
  n.aux = {column};
  return push(std::move(n));
}

NodeId Graph::expand(NodeId a, Shape out_shape, std::vector<std::size_t> axes) {
  const Shape& sa = shape(a);
  bool ok = axes.size() == sa.size();
  for (std::size_t i = 0; ok && i < axes.size(); ++i) {
    ok = axes[i] < out_shape.size() && out_shape[axes[i]] == sa[i] && (i == 0 || axes[i] > axes[i - 1]);
  }
  if (!ok) shape_fail("expand", "input dims embedded in " + shape_str(out_shape), sa);
  Node n = make_node(OpKind::expand, {a}, out_shape);
  // aux: for every output element, the flat index of its source element.
  const std::size_t total = shape_size(out_shape);
  std::vector<std::size_t> in_stride(out_shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = axes.size(); i-- > 0;) {
    in_stride[axes[i]] = stride;
    stride *= sa[i];
  }
  n.aux.resize(total);
  std::vector<std::size_t> coord(out_shape.size(), 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < out_shape.size(); ++d) src += coord[d] * in_stride[d];
    n.aux[o] = src;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      if (++coord[d] < out_shape[d]) break;
      coord[d] = 0;
    }
  }
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw DomainError("concat of nothing");
  std::size_t total = 0;
  for (NodeId p : parts) total += value(p).size();
  return push(make_node(OpKind::concat, parts, {total}));
}

NodeId Graph::unary(NodeId a, std::shared_ptr<const UnaryKernel> kernel) {
  Node n = make_node(OpKind::unary, {a}, shape(a));
  n.unary = std::move(kernel);
  return push(std::move(n));
}

NodeId Graph::binary(NodeId a, NodeId b, std::shared_ptr<const BinaryKernel> kernel) {
  if (shape(a) != shape(b)) shape_fail(kernel->name(), shape_str(shape(a)), shape(b));
  Node n = make_node(OpKind::binary, {a, b}, shape(a));
  n.binary = std::move(kernel);
  return push(std::move(n));
}

NodeId Graph::reduce_last(NodeId a, std::shared_ptr<const ReduceKernel> kernel) {
  const Shape& sa = shape(a);
  if (sa.empty() || sa.back() == 0) shape_fail(kernel->name(), "non-empty last axis", sa);
  Node n = make_node(OpKind::reduce_last, {a}, Shape(sa.begin(), sa.end() - 1));
  n.reduce = std::move(kernel);
  return push(std::move(n));
}

// ---- evaluation ------------------------------------------------------------

void Graph::forward(const Feeds& feeds) {
  for (const auto& [id, t] : feeds) {
    check_id(id);
    Node& n = nodes_[id];
    if (n.op != OpKind::placeholder) throw DomainError("node " + std::to_string(id) + " is not a placeholder");
    if (t.shape() != n.value.shape())
      throw ShapeError(id, "placeholder", shape_str(n.value.shape()), shape_str(t.shape()));
    n.value = t;
  }
  for (NodeId id = 0; id < nodes_.size(); ++id) evaluate(id);
}

void Graph::evaluate(NodeId id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t i) -> const Tensor& { return value(n.in[i]); };
  double* y = n.value.data().data();
  const std::size_t size = n.value.size();

  switch (n.op) {
    case OpKind::placeholder:
    case OpKind::constant:
    case OpKind::parameter:
      return;
    case OpKind::add: {
      const double* a = in(0).data().data();
      const double* b = in(1).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = a[i] + b[i];
      return;
    }
    case OpKind::sub: {
      const double* a = in(0).data().data();
      const double* b = in(1).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = a[i] - b[i];
      return;
    }
    case OpKind::mul: {
      const double* a = in(0).data().data();
      const double* b = in(1).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = a[i] * b[i];
      return;
    }
    case OpKind::affine: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = n.a * a[i] + n.b;
      return;
    }
    case OpKind::matmul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      const std::size_t rows = A.dim(0), inner = A.dim(1), cols = B.dim(1);
      const double* a = A.data().data();
      const double* b = B.data().data();
      std::fill(y, y + size, 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        double* yr = y + i * cols;
        for (std::size_t p = 0; p < inner; ++p) {
          const double av = a[i * inner + p];
          if (av == 0.0) continue;
          const double* br = b + p * cols;
          for (std::size_t j = 0; j < cols; ++j) yr[j] += av * br[j];
        }
      }
      return;
    }
    case OpKind::add_bias: {
      const double* x = in(0).data().data();
      const double* b = in(1).data().data();
      const std::size_t k = in(1).size();
      for (std::size_t i = 0; i < size; ++i) y[i] = x[i] + b[i % k];
      return;
    }
    case OpKind::relu: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = a[i] > 0.0 ? a[i] : 0.0;
      return;
    }
    case OpKind::sigmoid: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = sigmoid_value(a[i]);
      return;
    }
    case OpKind::log: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = std::log(std::max(a[i], kLogFloor));
      return;
    }
    case OpKind::pow: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = std::pow(a[i], n.a);
      return;
    }
    case OpKind::clamp: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = std::clamp(a[i], n.a, n.b);
      return;
    }
    case OpKind::softmax: {
      const double* a = in(0).data().data();
      const std::size_t k = n.value.shape().back();
      for (std::size_t r = 0; r < size / k; ++r) {
        const double* ar = a + r * k;
        double* yr = y + r * k;
        const double mx = *std::max_element(ar, ar + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += (yr[j] = std::exp(ar[j] - mx));
        for (std::size_t j = 0; j < k; ++j) yr[j] /= total;
      }
      return;
    }
    case OpKind::mean:
    case OpKind::sum: {
      const auto a = in(0).data();
      double total = 0.0;
      for (double v : a) total += v;
      y[0] = n.op == OpKind::mean ? total / static_cast<double>(a.size()) : total;
      return;
    }
    case OpKind::conv2d: {
      const Tensor& X = in(0);
      const Tensor& W = in(1);
      const std::size_t N = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3), K = W.dim(3);
      const double* x = X.data().data();
      const double* w = W.data().data();
      std::fill(y, y + size, 0.0);
      for (std::size_t b = 0; b < N; ++b) {
        for (std::size_t r = 0; r < H; ++r) {
          for (std::size_t c = 0; c < Wd; ++c) {
            double* out = y + ((b * H + r) * Wd + c) * K;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(r + ky) - 1;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(c + kx) - 1;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
                const double* px = x + ((b * H + iy) * Wd + ix) * C;
                const double* wk = w + (ky * 3 + kx) * C * K;
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double v = px[ch];
                  const double* wr = wk + ch * K;
                  for (std::size_t k = 0; k < K; ++k) out[k] += v * wr[k];
                }
              }
            }
          }
        }
      }
      return;
    }
    case OpKind::max_pool2: {
      const Tensor& X = in(0);
      const std::size_t N = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3);
      const std::size_t Ho = H / 2, Wo = Wd / 2;
      const double* x = X.data().data();
      for (std::size_t b = 0; b < N; ++b)
        for (std::size_t r = 0; r < Ho; ++r)
          for (std::size_t c = 0; c < Wo; ++c)
            for (std::size_t ch = 0; ch < C; ++ch) {
              std::size_t best = ((b * H + 2 * r) * Wd + 2 * c) * C + ch;
              for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                  const std::size_t idx = ((b * H + 2 * r + dy) * Wd + 2 * c + dx) * C + ch;
                  if (x[idx] > x[best]) best = idx;
                }
              const std::size_t o = ((b * Ho + r) * Wo + c) * C + ch;
              y[o] = x[best];
              n.aux[o] = best;
            }
      return;
    }
    case OpKind::reshape: {
      const auto a = in(0).data();
      std::copy(a.begin(), a.end(), y);
      return;
    }
    case OpKind::select_column: {
      const Tensor& A = in(0);
      const std::size_t k = A.dim(1);
      for (std::size_t i = 0; i < size; ++i) y[i] = A[i * k + n.aux[0]];
      return;
    }
    case OpKind::expand: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = a[n.aux[i]];
      return;
    }
    case OpKind::concat: {
      std::size_t off = 0;
      for (std::size_t i = 0; i < n.in.size(); ++i) {
        const auto part = in(i).data();
        std::copy(part.begin(), part.end(), y + off);
        off += part.size();
      }
      return;
    }
    case OpKind::unary: {
      const double* a = in(0).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = n.unary->value(a[i]);
      return;
    }
    case OpKind::binary: {
      const double* a = in(0).data().data();
      const double* b = in(1).data().data();
      for (std::size_t i = 0; i < size; ++i) y[i] = n.binary->value(a[i], b[i]);
      return;
    }
    case OpKind::reduce_last: {
      const Tensor& A = in(0);
      const std::size_t k = A.shape().back();
      for (std::size_t r = 0; r < size; ++r) y[r] = n.reduce->value(A.data().subspan(r * k, k));
      return;
    }
  }
}

// ---- differentiation -------------------------------------------------------

Gradients Graph::backward(NodeId root) const {
  check_id(root);
  if (value(root).size() != 1)
    throw ShapeError(root, "backward", "scalar root", shape_str(value(root).shape()));

  // needs[i]: node i depends on some trainable parameter.
  std::vector<char> needs(nodes_.size(), 0);
  for (NodeId i = 0; i <= root; ++i) {
    const Node& n = nodes_[i];
    if (n.op == OpKind::parameter) {
      needs[i] = n.param->trainable;
      continue;
    }
    for (NodeId p : n.in)
      if (needs[p]) {
        needs[i] = 1;
        break;
      }
  }

  std::vector<Tensor> grads(root + 1, Tensor(Shape{0}));
  std::vector<char> has(root + 1, 0);
  if (needs[root]) {
    grads[root] = Tensor(value(root).shape(), 1.0);
    has[root] = 1;
  }
  for (NodeId i = root + 1; i-- > 0;) {
    if (!has[i] || nodes_[i].op == OpKind::parameter) continue;
    const Node& n = nodes_[i];
    for (NodeId p : n.in) {
      if (needs[p] && !has[p]) {
        grads[p] = Tensor(value(p).shape(), 0.0);
        has[p] = 1;
      }
    }
    accumulate(n, i, grads[i], grads, needs);
  }

  Gradients out;
  for (NodeId id : parameter_nodes(true)) {
    if (id <= root && has[id])
      out.emplace(id, std::move(grads[id]));
    else
      out.emplace(id, Tensor(value(id).shape(), 0.0));
  }
  return out;
}

void Graph::accumulate(const Node& n, NodeId id, const Tensor& gyt, std::vector<Tensor>& grads,
                       const std::vector<char>& needs) const {
  const double* gy = gyt.data().data();
  const double* y = value(id).data().data();
  const std::size_t size = gyt.size();
  auto want = [&](std::size_t i) { return needs[n.in[i]] != 0; };
  auto g = [&](std::size_t i) -> double* { return grads[n.in[i]].data().data(); };
  auto in = [&](std::size_t i) -> const Tensor& { return value(n.in[i]); };

  switch (n.op) {
    case OpKind::placeholder:
    case OpKind::constant:
    case OpKind::parameter:
      return;
    case OpKind::add:
      for (std::size_t k = 0; k < 2; ++k)
        if (want(k)) {
          double* ga = g(k);
          for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i];
        }
      return;
    case OpKind::sub:
      if (want(0)) {
        double* ga = g(0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i];
      }
      if (want(1)) {
        double* gb = g(1);
        for (std::size_t i = 0; i < size; ++i) gb[i] -= gy[i];
      }
      return;
    case OpKind::mul: {
      const double* a = in(0).data().data();
      const double* b = in(1).data().data();
      if (want(0)) {
        double* ga = g(0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i] * b[i];
      }
      if (want(1)) {
        double* gb = g(1);
        for (std::size_t i = 0; i < size; ++i) gb[i] += gy[i] * a[i];
      }
      return;
    }
    case OpKind::affine: {
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i] * n.a;
      return;
    }
    case OpKind::matmul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      const std::size_t rows = A.dim(0), inner = A.dim(1), cols = B.dim(1);
      const double* a = A.data().data();
      const double* b = B.data().data();
      if (want(0)) {
        double* ga = g(0);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t p = 0; p < inner; ++p) {
            const double* br = b + p * cols;
            const double* gr = gy + i * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += gr[j] * br[j];
            ga[i * inner + p] += acc;
          }
      }
      if (want(1)) {
        double* gb = g(1);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t p = 0; p < inner; ++p) {
            const double av = a[i * inner + p];
            if (av == 0.0) continue;
            const double* gr = gy + i * cols;
            double* gbr = gb + p * cols;
            for (std::size_t j = 0; j < cols; ++j) gbr[j] += av * gr[j];
          }
      }
      return;
    }
    case OpKind::add_bias: {
      if (want(0)) {
        double* gx = g(0);
        for (std::size_t i = 0; i < size; ++i) gx[i] += gy[i];
      }
      if (want(1)) {
        double* gb = g(1);
        const std::size_t k = in(1).size();
        for (std::size_t i = 0; i < size; ++i) gb[i % k] += gy[i];
      }
      return;
    }
    case OpKind::relu: {
      const double* a = in(0).data().data();
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i)
        if (a[i] > 0.0) ga[i] += gy[i];
      return;
    }
    case OpKind::sigmoid: {
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case OpKind::log: {
      const double* a = in(0).data().data();
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i)
        if (a[i] >= kLogFloor) ga[i] += gy[i] / a[i];
      return;
    }
    case OpKind::pow: {
      const double* a = in(0).data().data();
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i] * n.a * std::pow(a[i], n.a - 1.0);
      return;
    }
    case OpKind::clamp: {
      const double* a = in(0).data().data();
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i)
        if (a[i] >= n.a && a[i] <= n.b) ga[i] += gy[i];
      return;
    }
    case OpKind::softmax: {
      double* ga = g(0);
      const std::size_t k = gyt.shape().back();
      for (std::size_t r = 0; r < size / k; ++r) {
        const double* yr = y + r * k;
        const double* gr = gy + r * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += yr[j] * (gr[j] - dot);
      }
      return;
    }
    case OpKind::mean:
    case OpKind::sum: {
      double* ga = g(0);
      const std::size_t m = in(0).size();
      const double d = n.op == OpKind::mean ? gy[0] / static_cast<double>(m) : gy[0];
      for (std::size_t i = 0; i < m; ++i) ga[i] += d;
      return;
    }
    case OpKind::conv2d: {
      const Tensor& X = in(0);
      const Tensor& W = in(1);
      const std::size_t N = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3), K = W.dim(3);
      const double* x = X.data().data();
      const double* w = W.data().data();
      double* gx = want(0) ? g(0) : nullptr;
      double* gw = want(1) ? g(1) : nullptr;
      for (std::size_t b = 0; b < N; ++b) {
        for (std::size_t r = 0; r < H; ++r) {
          for (std::size_t c = 0; c < Wd; ++c) {
            const double* go = gy + ((b * H + r) * Wd + c) * K;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(r + ky) - 1;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(c + kx) - 1;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
                const std::size_t xoff = ((b * H + iy) * Wd + ix) * C;
                const std::size_t woff = (ky * 3 + kx) * C * K;
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const double* wr = w + woff + ch * K;
                  if (gx) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < K; ++k) acc += go[k] * wr[k];
                    gx[xoff + ch] += acc;
                  }
                  if (gw) {
                    const double v = x[xoff + ch];
                    double* gwr = gw + woff + ch * K;
                    for (std::size_t k = 0; k < K; ++k) gwr[k] += v * go[k];
                  }
                }
              }
            }
          }
        }
      }
      return;
    }
    case OpKind::max_pool2: {
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[n.aux[i]] += gy[i];
      return;
    }
    case OpKind::reshape: {
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i];
      return;
    }
    case OpKind::select_column: {
      double* ga = g(0);
      const std::size_t k = in(0).dim(1);
      for (std::size_t i = 0; i < size; ++i) ga[i * k + n.aux[0]] += gy[i];
      return;
    }
    case OpKind::expand: {
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[n.aux[i]] += gy[i];
      return;
    }
    case OpKind::concat: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        const std::size_t m = in(k).size();
        if (want(k)) {
          double* gk = g(k);
          for (std::size_t i = 0; i < m; ++i) gk[i] += gy[off + i];
        }
        off += m;
      }
      return;
    }
    case OpKind::unary: {
      const double* a = in(0).data().data();
      double* ga = g(0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += gy[i] * n.unary->derivative(a[i], y[i]);
      return;
    }
    case OpKind::binary: {
      const double* a = in(0).data().data();
      const double* b = in(1).data().data();
      double* ga = want(0) ? g(0) : nullptr;
      double* gb = want(1) ? g(1) : nullptr;
      for (std::size_t i = 0; i < size; ++i) {
        double da = 0.0, db = 0.0;
        n.binary->partials(a[i], b[i], y[i], da, db);
        if (ga) ga[i] += gy[i] * da;
        if (gb) gb[i] += gy[i] * db;
      }
      return;
    }
    case OpKind::reduce_last: {
      const Tensor& A = in(0);
      const std::size_t k = A.shape().back();
      double* ga = g(0);
      std::vector<double> row(k);
      for (std::size_t r = 0; r < size; ++r) {
        n.reduce->gradient(A.data().subspan(r * k, k), y[r], row);
        for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += gy[r] * row[j];
      }
      return;
    }
  }
}

std::uint64_t Graph::branch_signature() const {
  std::uint64_t h = 0;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    switch (n.op) {
      case OpKind::relu:
        for (double v : value(n.in[0]).data()) h = mix(h, v > 0.0);
        break;
      case OpKind::log:
        for (double v : value(n.in[0]).data()) h = mix(h, v >= kLogFloor);
        break;
      case OpKind::clamp:
        for (double v : value(n.in[0]).data()) h = mix(h, v < n.a ? 0 : (v > n.b ? 2 : 1));
        break;
      case OpKind::max_pool2:
        for (std::size_t a : n.aux) h = mix(h, a);
        break;
      case OpKind::unary:
        for (double v : value(n.in[0]).data()) h = mix(h, static_cast<std::uint64_t>(n.unary->branch(v)));
        break;
      case OpKind::binary: {
        const auto a = value(n.in[0]).data();
        const auto b = value(n.in[1]).data();
        for (std::size_t i = 0; i < a.size(); ++i)
          h = mix(h, static_cast<std::uint64_t>(n.binary->branch(a[i], b[i])));
        break;
      }
      default:
        break;
    }
  }
  return h;
}

std::vector<std::pair<ParameterPtr, Tensor>> gradients_by_parameter(const Graph& graph, const Gradients& grads) {
  std::vector<std::pair<ParameterPtr, Tensor>> out;
  std::unordered_map<const Parameter*, std::size_t> slot;
  for (const auto& [id, g] : grads) {
    const ParameterPtr& p = graph.parameter_of(id);
    auto it = slot.find(p.get());
    if (it == slot.end()) {
      slot.emplace(p.get(), out.size());
      out.emplace_back(p, g);
    } else {
      auto dst = out[it->second].second.data();
      const auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

}  // namespace nesy
