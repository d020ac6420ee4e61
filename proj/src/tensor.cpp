#include "pfv2/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pfv2 {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  Primitive op = Primitive::leaf;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad, accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

struct FaultState {
  bool active = false;
  Primitive target = Primitive::leaf;
  double factor = 1.0;
};
FaultState g_fault;

NodePtr make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void require_defined(const Tensor& t, const char* primitive) {
  if (!t.defined()) throw std::invalid_argument(std::string(primitive) + ": undefined tensor");
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    const double* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
      }
      for (; k < K; ++k) s0 += a[k] * b[k];
      C[i * N + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
             double* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double av = a[i];
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

Tensor wrap(NodePtr node);

}  // namespace

struct TensorAccess {
  static const NodePtr& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

Tensor wrap(NodePtr node) { return TensorAccess::wrap(std::move(node)); }
const NodePtr& node_of(const Tensor& t) { return TensorAccess::node(t); }

// Attaches history to `out` if any input participates in autodiff.
void record(const NodePtr& out, Primitive op, std::vector<NodePtr> inputs,
            std::function<void(Node&)> rule) {
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in->requires_grad;
  }
  out->op = op;
  if (!any) return;
  out->requires_grad = true;
  out->inputs = std::move(inputs);
  out->backward = std::move(rule);
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& primitive, const Shape& a, const Shape& b,
                       const std::string& detail)
    : std::invalid_argument(primitive + ": shape mismatch " + shape_str(a) + " vs " +
                            shape_str(b) + (detail.empty() ? "" : " (" + detail + ")")) {}

const char* primitive_name(Primitive op) {
  switch (op) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::scale: return "scale";
    case Primitive::transpose: return "transpose";
    case Primitive::reshape: return "reshape";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::softmax_lastdim: return "softmax_lastdim";
    case Primitive::layernorm_lastdim: return "layernorm_lastdim";
    case Primitive::gelu: return "gelu";
    case Primitive::conv1d_valid: return "conv1d_valid";
    case Primitive::gather_rows: return "gather_rows";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::norm_lastdim: return "norm_lastdim";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("Tensor::from: zero-sized dimension in " + shape_str(shape));
  }
  auto node = make_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("at: index rank " + std::to_string(index.size()) + " vs " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw std::out_of_range("at: index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  require_defined(*this, "set_requires_grad");
  if (!is_leaf()) throw std::logic_error("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return defined() && node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad: tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::clear_grad() {
  require_defined(*this, "clear_grad");
  node_->grad.clear();
}

Primitive Tensor::op() const { return node_ ? node_->op : Primitive::leaf; }
std::uint64_t Tensor::node_id() const { return node_ ? node_->id : 0; }
bool Tensor::is_leaf() const { return node_ && !node_->backward; }

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(make_node(node_->shape, node_->data));
}

// ---------------------------------------------------------------------------
// Primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul", sa, sb, "operands need rank >= 2");
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != kb) throw ShapeError("matmul", sa, sb, "inner dimensions differ");

  enum class Mode { shared_right, shared_left, batched } mode;
  Shape out_shape;
  std::size_t batch = 1;
  if (sb.size() == 2) {
    mode = Mode::shared_right;
    out_shape.assign(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  } else if (sa.size() == 2) {
    mode = Mode::shared_left;
    out_shape.assign(sb.begin(), sb.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    batch = shape_numel(Shape(sb.begin(), sb.end() - 2));
  } else {
    if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
      throw ShapeError("matmul", sa, sb, "batch dimensions differ");
    }
    mode = Mode::batched;
    out_shape.assign(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  }

  const NodePtr& na = node_of(a);
  const NodePtr& nb = node_of(b);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const double* A = na->data.data();
  const double* B = nb->data.data();
  switch (mode) {
    case Mode::shared_right:
      gemm_nn(batch * m, n, k, A, B, out.data());
      break;
    case Mode::shared_left:
      for (std::size_t i = 0; i < batch; ++i) gemm_nn(m, n, k, A, B + i * k * n, out.data() + i * m * n);
      break;
    case Mode::batched:
      for (std::size_t i = 0; i < batch; ++i)
        gemm_nn(m, n, k, A + i * m * k, B + i * k * n, out.data() + i * m * n);
      break;
  }

  NodePtr res = make_node(std::move(out_shape), std::move(out));
  record(res, Primitive::matmul, {na, nb}, [mode, batch, m, n, k](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    const double* G = self.grad.data();
    if (ia.requires_grad) {
      ia.ensure_grad();
      double* dA = ia.grad.data();
      const double* B = ib.data.data();
      switch (mode) {
        case Mode::shared_right: gemm_nt(batch * m, k, n, G, B, dA); break;
        case Mode::shared_left:
          for (std::size_t i = 0; i < batch; ++i) gemm_nt(m, k, n, G + i * m * n, B + i * k * n, dA);
          break;
        case Mode::batched:
          for (std::size_t i = 0; i < batch; ++i)
            gemm_nt(m, k, n, G + i * m * n, B + i * k * n, dA + i * m * k);
          break;
      }
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      double* dB = ib.grad.data();
      const double* A = ia.data.data();
      switch (mode) {
        case Mode::shared_right: gemm_tn(k, n, batch * m, A, G, dB); break;
        case Mode::shared_left:
          for (std::size_t i = 0; i < batch; ++i) gemm_tn(k, n, m, A, G + i * m * n, dB + i * k * n);
          break;
        case Mode::batched:
          for (std::size_t i = 0; i < batch; ++i)
            gemm_tn(k, n, m, A + i * m * k, G + i * m * n, dB + i * k * n);
          break;
      }
    }
  });
  return wrap(res);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool bias = sa != sb;
  if (bias && !(sb.size() == 1 && !sa.empty() && sb[0] == sa.back())) {
    throw ShapeError("add", sa, sb, "shapes must match or rhs must be a last-dim bias");
  }
  const NodePtr& na = node_of(a);
  const NodePtr& nb = node_of(b);
  std::vector<double> out = na->data;
  const std::size_t width = nb->data.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += nb->data[bias ? i % width : i];

  NodePtr res = make_node(sa, std::move(out));
  record(res, Primitive::add, {na, nb}, [bias, width](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    if (ia.requires_grad) {
      ia.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += self.grad[i];
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib.grad[bias ? i % width : i] += self.grad[i];
    }
  });
  return wrap(res);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.shape() != b.shape()) throw ShapeError("sub", a.shape(), b.shape());
  const NodePtr& na = node_of(a);
  const NodePtr& nb = node_of(b);
  std::vector<double> out = na->data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= nb->data[i];
  NodePtr res = make_node(a.shape(), std::move(out));
  record(res, Primitive::sub, {na, nb}, [](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    if (ia.requires_grad) {
      ia.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += self.grad[i];
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib.grad[i] -= self.grad[i];
    }
  });
  return wrap(res);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) throw ShapeError("mul", a.shape(), b.shape());
  const NodePtr& na = node_of(a);
  const NodePtr& nb = node_of(b);
  std::vector<double> out(na->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->data[i] * nb->data[i];
  NodePtr res = make_node(a.shape(), std::move(out));
  record(res, Primitive::mul, {na, nb}, [](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    if (ia.requires_grad) {
      ia.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += self.grad[i] * ib.data[i];
    }
    if (ib.requires_grad) {
      ib.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib.grad[i] += self.grad[i] * ia.data[i];
    }
  });
  return wrap(res);
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  const NodePtr& na = node_of(a);
  std::vector<double> out = na->data;
  for (double& v : out) v *= factor;
  NodePtr res = make_node(a.shape(), std::move(out));
  record(res, Primitive::scale, {na}, [factor](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += factor * self.grad[i];
  });
  return wrap(res);
}

namespace {

// Views `shape` as [pre, d0, mid, d1, post] around the swapped axes.
struct SwapLayout {
  std::size_t pre, d0, mid, d1, post;
};

SwapLayout swap_layout(const Shape& s, std::size_t ax0, std::size_t ax1) {
  auto prod = [&](std::size_t from, std::size_t to) {
    std::size_t p = 1;
    for (std::size_t i = from; i < to; ++i) p *= s[i];
    return p;
  };
  return {prod(0, ax0), s[ax0], prod(ax0 + 1, ax1), s[ax1], prod(ax1 + 1, s.size())};
}

// out[p, j, m, i, :] = in[p, i, m, j, :]
void swap_copy(const SwapLayout& L, const double* in, double* out, bool accumulate) {
  for (std::size_t p = 0; p < L.pre; ++p)
    for (std::size_t i = 0; i < L.d0; ++i)
      for (std::size_t m = 0; m < L.mid; ++m)
        for (std::size_t j = 0; j < L.d1; ++j) {
          const double* src = in + ((((p * L.d0 + i) * L.mid + m) * L.d1 + j) * L.post);
          double* dst = out + ((((p * L.d1 + j) * L.mid + m) * L.d0 + i) * L.post);
          if (accumulate) {
            for (std::size_t q = 0; q < L.post; ++q) dst[q] += src[q];
          } else {
            std::copy(src, src + L.post, dst);
          }
        }
}

}  // namespace

Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1) {
  require_defined(a, "transpose");
  const Shape& s = a.shape();
  if (axis0 == axis1 || axis0 >= s.size() || axis1 >= s.size()) {
    throw ShapeError("transpose: invalid axes (" + std::to_string(axis0) + ", " +
                     std::to_string(axis1) + ") for " + shape_str(s));
  }
  if (axis0 > axis1) std::swap(axis0, axis1);
  const SwapLayout L = swap_layout(s, axis0, axis1);
  Shape out_shape = s;
  std::swap(out_shape[axis0], out_shape[axis1]);
  const NodePtr& na = node_of(a);
  std::vector<double> out(na->data.size());
  swap_copy(L, na->data.data(), out.data(), false);
  NodePtr res = make_node(std::move(out_shape), std::move(out));
  const SwapLayout back{L.pre, L.d1, L.mid, L.d0, L.post};
  record(res, Primitive::transpose, {na}, [back](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    swap_copy(back, self.grad.data(), ia.grad.data(), true);
  });
  return wrap(res);
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() < 2) throw ShapeError("transpose: rank < 2 for " + shape_str(a.shape()));
  return transpose(a, a.rank() - 2, a.rank() - 1);
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape, "element count differs");
  const NodePtr& na = node_of(a);
  NodePtr res = make_node(std::move(shape), na->data);
  record(res, Primitive::reshape, {na}, [](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ia.grad[i] += self.grad[i];
  });
  return wrap(res);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const Tensor& p : parts) require_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) throw ShapeError("concat", s0, s, "non-concat dimensions differ");
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  Shape out_shape = s0;
  out_shape[axis] = total;

  std::vector<NodePtr> inputs;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    inputs.push_back(node_of(p));
    widths.push_back(p.shape()[axis] * inner);
  }
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double* src = inputs[i]->data.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * widths[i], src + (o + 1) * widths[i], out.begin() + o * row + offset);
    }
    offset += widths[i];
  }
  NodePtr res = make_node(std::move(out_shape), std::move(out));
  record(res, Primitive::concat, std::move(inputs), [widths, outer, row](Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node& in = *self.inputs[i];
      if (in.requires_grad) {
        in.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + o * row + off;
          double* d = in.grad.data() + o * widths[i];
          for (std::size_t q = 0; q < widths[i]; ++q) d[q] += g[q];
        }
      }
      off += widths[i];
    }
  });
  return wrap(res);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const NodePtr& na = node_of(a);
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = na->data.data() + o * in_row + off;
    std::copy(src, src + out_row, out.begin() + o * out_row);
  }
  NodePtr res = make_node(std::move(out_shape), std::move(out));
  record(res, Primitive::slice, {na}, [outer, in_row, out_row, off](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      double* d = ia.grad.data() + o * in_row + off;
      const double* g = self.grad.data() + o * out_row;
      for (std::size_t q = 0; q < out_row; ++q) d[q] += g[q];
    }
  });
  return wrap(res);
}

Tensor softmax_lastdim(const Tensor& a) {
  require_defined(a, "softmax_lastdim");
  if (a.rank() < 1) throw ShapeError("softmax_lastdim: scalar input");
  const std::size_t width = a.shape().back();
  const NodePtr& na = node_of(a);
  std::vector<double> out(na->data.size());
  for (std::size_t r = 0; r < out.size(); r += width) {
    const double* x = na->data.data() + r;
    double* y = out.data() + r;
    const double mx = *std::max_element(x, x + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  NodePtr res = make_node(a.shape(), std::move(out));
  record(res, Primitive::softmax_lastdim, {na}, [width](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (std::size_t r = 0; r < self.data.size(); r += width) {
      const double* y = self.data.data() + r;
      const double* g = self.grad.data() + r;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
      double* d = ia.grad.data() + r;
      for (std::size_t j = 0; j < width; ++j) d[j] += y[j] * (g[j] - dot);
    }
  });
  return wrap(res);
}

Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layernorm_lastdim");
  require_defined(gamma, "layernorm_lastdim");
  require_defined(beta, "layernorm_lastdim");
  if (x.rank() < 1) throw ShapeError("layernorm_lastdim: scalar input");
  const std::size_t width = x.shape().back();
  if (gamma.shape() != Shape{width}) throw ShapeError("layernorm_lastdim", x.shape(), gamma.shape(), "gamma");
  if (beta.shape() != Shape{width}) throw ShapeError("layernorm_lastdim", x.shape(), beta.shape(), "beta");
  const NodePtr& nx = node_of(x);
  const NodePtr& ng = node_of(gamma);
  const NodePtr& nb = node_of(beta);
  const std::size_t rows = nx->data.size() / width;
  auto xhat = std::make_shared<std::vector<double>>(nx->data.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(nx->data.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = nx->data.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += xr[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(width);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * width + j] = h;
      out[r * width + j] = h * ng->data[j] + nb->data[j];
    }
  }
  NodePtr res = make_node(x.shape(), std::move(out));
  record(res, Primitive::layernorm_lastdim, {nx, ng, nb}, [width, rows, xhat, rstd](Node& self) {
    Node& ix = *self.inputs[0];
    Node& ig = *self.inputs[1];
    Node& ib = *self.inputs[2];
    if (ig.requires_grad) ig.ensure_grad();
    if (ib.requires_grad) ib.ensure_grad();
    if (ix.requires_grad) ix.ensure_grad();
    std::vector<double> dh(width);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * width;
      const double* h = xhat->data() + r * width;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        if (ig.requires_grad) ig.grad[j] += g[j] * h[j];
        if (ib.requires_grad) ib.grad[j] += g[j];
        dh[j] = g[j] * ig.data[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * h[j];
      }
      if (!ix.requires_grad) continue;
      mean_dh /= static_cast<double>(width);
      mean_dh_h /= static_cast<double>(width);
      double* d = ix.grad.data() + r * width;
      const double rs = (*rstd)[r];
      for (std::size_t j = 0; j < width; ++j) d[j] += rs * (dh[j] - mean_dh - h[j] * mean_dh_h);
    }
  });
  return wrap(res);
}

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kBeta = 0.044715;
  const NodePtr& na = node_of(a);
  std::vector<double> out(na->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = na->data[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kAlpha * (x + kBeta * x * x * x)));
  }
  NodePtr res = make_node(a.shape(), std::move(out));
  record(res, Primitive::gelu, {na}, [](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = ia.data[i];
      const double t = std::tanh(kAlpha * (x + kBeta * x * x * x));
      const double dt = (1.0 - t * t) * kAlpha * (1.0 + 3.0 * kBeta * x * x);
      ia.grad[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
    }
  });
  return wrap(res);
}

Tensor conv1d_valid(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined(x, "conv1d_valid");
  require_defined(w, "conv1d_valid");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 3) throw ShapeError("conv1d_valid", sx, sw, "expected x [B, Cin, L] and w [Cout, Cin, K]");
  const std::size_t B = sx[0], Cin = sx[1], L = sx[2];
  const std::size_t Cout = sw[0], K = sw[2];
  if (sw[1] != Cin) throw ShapeError("conv1d_valid", sx, sw, "input channels differ");
  if (K > L) throw ShapeError("conv1d_valid", sx, sw, "kernel longer than input");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{Cout}) throw ShapeError("conv1d_valid", sw, bias.shape(), "bias");
  const std::size_t Lout = L - K + 1;
  const NodePtr& nx = node_of(x);
  const NodePtr& nw = node_of(w);
  std::vector<double> out(B * Cout * Lout, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Cout; ++o) {
      double* y = out.data() + (b * Cout + o) * Lout;
      if (has_bias) std::fill(y, y + Lout, bias.data()[o]);
      for (std::size_t c = 0; c < Cin; ++c) {
        const double* xr = nx->data.data() + (b * Cin + c) * L;
        for (std::size_t k = 0; k < K; ++k) {
          const double wv = nw->data[(o * Cin + c) * K + k];
          for (std::size_t l = 0; l < Lout; ++l) y[l] += wv * xr[l + k];
        }
      }
    }
  std::vector<NodePtr> inputs{nx, nw};
  if (has_bias) inputs.push_back(node_of(bias));
  NodePtr res = make_node({B, Cout, Lout}, std::move(out));
  record(res, Primitive::conv1d_valid, std::move(inputs), [B, Cin, L, Cout, K, Lout](Node& self) {
    Node& ix = *self.inputs[0];
    Node& iw = *self.inputs[1];
    if (ix.requires_grad) ix.ensure_grad();
    if (iw.requires_grad) iw.ensure_grad();
    Node* ib = self.inputs.size() > 2 && self.inputs[2]->requires_grad ? self.inputs[2].get() : nullptr;
    if (ib) ib->ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Cout; ++o) {
        const double* g = self.grad.data() + (b * Cout + o) * Lout;
        if (ib) {
          for (std::size_t l = 0; l < Lout; ++l) ib->grad[o] += g[l];
        }
        for (std::size_t c = 0; c < Cin; ++c) {
          const double* xr = ix.data.data() + (b * Cin + c) * L;
          double* dx = ix.requires_grad ? ix.grad.data() + (b * Cin + c) * L : nullptr;
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t wi = (o * Cin + c) * K + k;
            if (iw.requires_grad) {
              double acc = 0.0;
              for (std::size_t l = 0; l < Lout; ++l) acc += g[l] * xr[l + k];
              iw.grad[wi] += acc;
            }
            if (dx) {
              const double wv = iw.data[wi];
              for (std::size_t l = 0; l < Lout; ++l) dx[l + k] += wv * g[l];
            }
          }
        }
      }
  });
  return wrap(res);
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  require_defined(table, "gather_rows");
  const Shape& s = table.shape();
  if (s.empty()) throw ShapeError("gather_rows: scalar table");
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t width = shape_numel(Shape(s.begin() + 1, s.end()));
  for (std::size_t r : rows) {
    if (r >= s[0]) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + shape_str(s));
  }
  const NodePtr& nt = node_of(table);
  std::vector<double> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(nt->data.begin() + rows[i] * width, width, out.begin() + i * width);
  }
  Shape out_shape = s;
  out_shape[0] = rows.size();
  NodePtr res = make_node(std::move(out_shape), std::move(out));
  record(res, Primitive::gather_rows, {nt}, [rows, width](Node& self) {
    Node& it = *self.inputs[0];
    it.ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t q = 0; q < width; ++q) it.grad[rows[i] * width + q] += self.grad[i * width + q];
  });
  return wrap(res);
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const NodePtr& na = node_of(a);
  double total = 0.0;
  for (double v : na->data) total += v;
  NodePtr res = make_node({}, {total});
  record(res, Primitive::sum, {na}, [](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (double& g : ia.grad) g += self.grad[0];
  });
  return wrap(res);
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  const NodePtr& na = node_of(a);
  const double n = static_cast<double>(na->data.size());
  double total = 0.0;
  for (double v : na->data) total += v;
  NodePtr res = make_node({}, {total / n});
  record(res, Primitive::mean, {na}, [n](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    const double g = self.grad[0] / n;
    for (double& d : ia.grad) d += g;
  });
  return wrap(res);
}

Tensor norm_lastdim(const Tensor& a) {
  require_defined(a, "norm_lastdim");
  if (a.rank() < 1) throw ShapeError("norm_lastdim: scalar input");
  const Shape& s = a.shape();
  const std::size_t width = s.back();
  const NodePtr& na = node_of(a);
  const std::size_t rows = na->data.size() / width;
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) acc += na->data[r * width + j] * na->data[r * width + j];
    out[r] = std::sqrt(acc);
  }
  Shape out_shape(s.begin(), s.end() - 1);
  NodePtr res = make_node(std::move(out_shape), std::move(out));
  record(res, Primitive::norm_lastdim, {na}, [width, rows](Node& self) {
    Node& ia = *self.inputs[0];
    ia.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double len = self.data[r];
      if (len == 0.0) continue;
      const double k = self.grad[r] / len;
      for (std::size_t j = 0; j < width; ++j) ia.grad[r * width + j] += k * ia.data[r * width + j];
    }
  });
  return wrap(res);
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss, std::vector<std::uint64_t>* visit_order) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  const NodePtr& root = node_of(loss);
  if (!root->requires_grad) throw std::logic_error("backward: loss does not depend on any tensor requiring grad");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  // Ids are allocated at creation, so descending id is reverse creation order.
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : order) {
    if (visit_order) visit_order->push_back(n->id);
    if (!n->backward) continue;
    n->ensure_grad();
    if (g_fault.active && g_fault.target == n->op) {
      for (double& g : n->grad) g *= g_fault.factor;
    }
    n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

namespace testing {

BackwardFault::BackwardFault(Primitive target, double factor) {
  g_fault = {true, target, factor};
}

BackwardFault::~BackwardFault() { g_fault = {}; }

}  // namespace testing

}  // namespace pfv2
