#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfv2 {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when a primitive receives operands whose shapes violate its contract.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& primitive, const Shape& a, const Shape& b,
             const std::string& detail = {});
  explicit ShapeError(const std::string& message) : std::invalid_argument(message) {}
};

enum class Primitive {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  transpose,
  reshape,
  concat,
  slice,
  softmax_lastdim,
  layernorm_lastdim,
  gelu,
  conv1d_valid,
  gather_rows,
  sum,
  mean,
  norm_lastdim,
};

const char* primitive_name(Primitive op);

namespace detail {
struct Node;
}

/// Dense row-major float64 tensor with an optional reverse-mode tape entry.
///
/// `Tensor` is a shared handle: copies alias the same storage and graph node.
/// Use `clone()` for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writes bypass the tape; only use on leaves or outside of a recorded pass.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  Primitive op() const;
  std::uint64_t node_id() const;
  bool is_leaf() const;

  /// Same values, fresh leaf without history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  detail::Node* node() const { return node_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Primitives. Every primitive records a tape node when grad mode is enabled
// and any input requires grad.

/// [..., m, k] x [k, n] (shared right), [m, k] x [..., k, n] (shared left), or
/// equal batch prefix on both sides.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum. `b` may also be a rank-1 bias matching the last dim of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor softmax_lastdim(const Tensor& a);
/// Normalizes over the last dim, then applies `gamma`/`beta` (rank-1, last dim).
Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5);
/// tanh approximation.
Tensor gelu(const Tensor& a);
/// x [B, Cin, L], w [Cout, Cin, K], optional bias [Cout] -> [B, Cout, L - K + 1].
Tensor conv1d_valid(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());
/// Selects rows (along axis 0) of `table`.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Euclidean norm over the last axis; the subgradient at zero is taken as zero.
Tensor norm_lastdim(const Tensor& a);

// ---------------------------------------------------------------------------

/// Runs reverse accumulation from a scalar. Gradients accumulate into `grad`
/// of every reachable tensor that requires grad. If `visit_order` is given,
/// the node ids are appended in the order their rules were applied.
void backward(const Tensor& loss, std::vector<std::uint64_t>* visit_order = nullptr);

/// Disables tape recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace testing {

/// Multiplies the input gradient produced by one primitive's backward rule by
/// `factor` while alive. Used to prove the gradient checker catches bad rules.
class BackwardFault {
 public:
  BackwardFault(Primitive target, double factor);
  ~BackwardFault();
  BackwardFault(const BackwardFault&) = delete;
  BackwardFault& operator=(const BackwardFault&) = delete;
};

}  // namespace testing

}  // namespace pfv2
