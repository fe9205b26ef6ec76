#ifndef RTN_TENSOR_HPP_
#define RTN_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "rtn/errors.hpp"

namespace rtn {

enum class PadMode { kZero, kReplicate };
enum class Border { kClamp, kZero };

class Tensor;

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily; same length as values
  bool requires_grad = false;  // leaf parameter flag
  bool needs_grad = false;     // true if a grad-requiring leaf is reachable
  bool consumed = false;       // backward already ran through this node
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Thread-local switch; when false, ops do not record the graph.
bool grad_enabled();
void set_grad_enabled(bool on);

}  // namespace detail

// Disables graph recording for the scope (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major tensor of doubles with reverse-mode autodiff.
// Spatial tensors use channels-last indexing (y, x, c). Values are treated
// as immutable once an op has consumed the tensor; only gradient buffers
// mutate afterwards.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Builds an op-output node. backward receives the output node and must
  // accumulate into the parents' grad buffers. The graph edge is recorded
  // only when grads are enabled and some parent needs them.
  static Tensor from_op(std::vector<int> shape, std::vector<double> values,
                        std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backward);

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::size_t size() const { return n_->values.size(); }

  const std::vector<double>& values() const { return n_->values; }
  std::vector<double>& mutable_values() { return n_->values; }
  const std::vector<double>& grad() const;

  bool requires_grad() const { return n_->requires_grad; }
  bool needs_grad() const { return n_ && n_->needs_grad; }
  void zero_grad();

  double item() const;

  // Rank-3 (y, x, c) accessors for the common spatial case.
  double at3(int y, int x, int c) const {
    const auto& s = n_->shape;
    return n_->values[static_cast<std::size_t>((y * s[1] + x) * s[2] + c)];
  }
  void set3(int y, int x, int c, double v) {
    const auto& s = n_->shape;
    n_->values[static_cast<std::size_t>((y * s[1] + x) * s[2] + c)] = v;
  }

  std::shared_ptr<detail::TensorNode> node() const { return n_; }

  friend void backward(const Tensor& loss, bool retain_graph);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> n_;
};

// Runs reverse-mode differentiation from a scalar loss. Each backward pass
// re-seeds interior gradients and accumulates into leaf gradients, so two
// retained passes double a leaf's grad. Unless retain_graph is set the
// graph is released and a second call raises UsageError.
void backward(const Tensor& loss, bool retain_graph = false);

void zero_grad(const std::vector<Tensor>& params);

// Elementwise / linear-algebra ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor l2_normalize_last(const Tensor& a, double epsilon = 1e-12);

// Cross-correlation over (y, x, c) input with (ky, kx, c_in, c_out) kernel.
// bias may be undefined. pad_mode selects zero padding or edge replication.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, PadMode pad_mode = PadMode::kZero);

// Samples grid (h, w, d) at m fractional (x, y) locations -> (m, d).
// Differentiable in both grid values and locations. Border kClamp
// replicates edge values; kZero reads zeros outside.
Tensor bilinear_sample(const Tensor& grid, const Tensor& locations,
                       Border border = Border::kClamp);

Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& a, int from, int count);
Tensor upsample_nearest(const Tensor& a, int out_h, int out_w);

// Max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|),
// central differences with step eps. Checks every element of every input
// that requires grad.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double eps = 1e-6);

// Same check restricted to `samples` randomly chosen elements (for large
// parameter sets); seed fixes the choice.
double grad_check_sampled(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs, double eps, int samples,
                          std::uint64_t seed);

std::string shape_to_string(const std::vector<int>& shape);

}  // namespace rtn

#endif  // RTN_TENSOR_HPP_
