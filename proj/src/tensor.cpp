#include "rtn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <unordered_set>

#include "rtn/interp.hpp"
#include "rtn/rng.hpp"

namespace rtn {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

}  // namespace detail

using detail::TensorNode;

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return from_values(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values.assign(n, value);
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  if (values.empty()) {
    node->values.assign(n, 0.0);
  } else {
    if (values.size() != n) {
      throw DimensionError("from_values: " + std::to_string(values.size()) +
                           " values for shape " + shape_to_string(node->shape));
    }
    node->values = std::move(values);
  }
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::from_op(std::vector<int> shape, std::vector<double> values,
                       std::vector<Tensor> parents,
                       std::function<void(TensorNode&)> backward) {
  const std::size_t n = shape_numel(shape);
  if (values.size() != n) {
    throw DimensionError("from_op: value count does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.needs_grad();
  if (needs && detail::grad_enabled()) {
    node->needs_grad = true;
    node->parents.reserve(parents.size());
    for (Tensor& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

const std::vector<double>& Tensor::grad() const {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() {
  n_->ensure_grad();
  std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item(): tensor has " + std::to_string(size()) + " elements");
  return n_->values[0];
}

void zero_grad(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

void backward(const Tensor& loss, bool retain_graph) {
  if (!loss.defined()) throw UsageError("backward: undefined tensor");
  if (loss.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
  }
  TensorNode* root = loss.n_.get();
  if (root->consumed) throw UsageError("backward: graph already consumed; pass retain_graph");
  if (!root->needs_grad) throw UsageError("backward: loss does not depend on any parameter");

  // Post-order DFS; reversed post-order visits each node before its parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are re-seeded every pass; leaf grads accumulate.
  for (TensorNode* n : order) {
    if (n->backward_fn) {
      n->grad.assign(n->values.size(), 0.0);
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }

  if (!retain_graph) {
    for (TensorNode* n : order) {
      if (n->backward_fn) {
        n->backward_fn = nullptr;
        n->parents.clear();
        n->consumed = true;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    for (int k = 0; k < 2; ++k) {
      TensorNode& p = *self.parents[static_cast<std::size_t>(k)];
      if (!p.needs_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.values[i];
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [c](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * c;
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected rank-2 operands, got " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dims differ, axis 1 of " + shape_to_string(a.shape()) +
                         " vs axis 0 of " + shape_to_string(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (int i = 0; i < m; ++i) {
    double* orow = &out[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double x = av[static_cast<std::size_t>(i) * k + p];
      const double* brow = &bv[static_cast<std::size_t>(p) * n];
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  return Tensor::from_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.needs_grad) {
      pa.ensure_grad();
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          const double* brow = &pb.values[static_cast<std::size_t>(p) * n];
          const double* grow = &g[static_cast<std::size_t>(i) * n];
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          pa.grad[static_cast<std::size_t>(i) * k + p] += s;
        }
      }
    }
    if (pb.needs_grad) {
      pb.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* grow = &g[static_cast<std::size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
          const double x = pa.values[static_cast<std::size_t>(i) * k + p];
          double* brow = &pb.grad[static_cast<std::size_t>(p) * n];
          for (int j = 0; j < n; ++j) brow[j] += x * grow[j];
        }
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::from_op({1}, {s}, {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::from_op({1}, {s * inv}, {a}, [inv](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range");
  const auto& shape = a.shape();
  const int len = shape[static_cast<std::size_t>(axis)];
  std::size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);

  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * static_cast<std::size_t>(len) * inner + in;
      double mx = av[base];
      for (int j = 1; j < len; ++j) mx = std::max(mx, av[base + static_cast<std::size_t>(j) * inner]);
      double z = 0.0;
      for (int j = 0; j < len; ++j) {
        const double e = std::exp(av[base + static_cast<std::size_t>(j) * inner] - mx);
        out[base + static_cast<std::size_t>(j) * inner] = e;
        z += e;
      }
      const double invz = 1.0 / z;
      for (int j = 0; j < len; ++j) out[base + static_cast<std::size_t>(j) * inner] *= invz;
    }
  }
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [len, inner, outer](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * static_cast<std::size_t>(len) * inner + in;
        double dot = 0.0;
        for (int j = 0; j < len; ++j) {
          const std::size_t idx = base + static_cast<std::size_t>(j) * inner;
          dot += self.grad[idx] * self.values[idx];
        }
        for (int j = 0; j < len; ++j) {
          const std::size_t idx = base + static_cast<std::size_t>(j) * inner;
          p.grad[idx] += self.values[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor l2_normalize_last(const Tensor& a, double epsilon) {
  const int r = a.rank();
  if (r < 1) throw DimensionError("l2_normalize_last: rank-0 tensor");
  const int d = a.dim(r - 1);
  const std::size_t rows = a.size() / static_cast<std::size_t>(d);
  std::vector<double> out(a.size());
  std::vector<double> inv_norm(rows);
  const auto& av = a.values();
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t base = row * static_cast<std::size_t>(d);
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += av[base + static_cast<std::size_t>(c)] * av[base + static_cast<std::size_t>(c)];
    const double inv = 1.0 / std::sqrt(s + epsilon);
    inv_norm[row] = inv;
    for (int c = 0; c < d; ++c) out[base + static_cast<std::size_t>(c)] = av[base + static_cast<std::size_t>(c)] * inv;
  }
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [d, rows, inv = std::move(inv_norm)](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t row = 0; row < rows; ++row) {
      const std::size_t base = row * static_cast<std::size_t>(d);
      double dot = 0.0;
      for (int c = 0; c < d; ++c) {
        const std::size_t i = base + static_cast<std::size_t>(c);
        dot += self.grad[i] * p.values[i];
      }
      const double k = inv[row];
      const double k3dot = k * k * k * dot;
      for (int c = 0; c < d; ++c) {
        const std::size_t i = base + static_cast<std::size_t>(c);
        p.grad[i] += self.grad[i] * k - p.values[i] * k3dot;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
  int h, w, cin, k, cout, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   int stride, int padding) {
  if (input.rank() != 3) {
    throw DimensionError("conv2d: input must be (h, w, c), got " + shape_to_string(input.shape()));
  }
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be (k, k, c_in, c_out), got " +
                         shape_to_string(kernel.shape()));
  }
  ConvDims d;
  d.h = input.dim(0);
  d.w = input.dim(1);
  d.cin = input.dim(2);
  d.k = kernel.dim(0);
  d.cout = kernel.dim(3);
  if (kernel.dim(1) != d.k) throw DimensionError("conv2d: kernel axes 0 and 1 differ");
  if (d.k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + std::to_string(d.k));
  if (kernel.dim(2) != d.cin) {
    throw DimensionError("conv2d: kernel axis 2 (" + std::to_string(kernel.dim(2)) +
                         ") does not match input axis 2 (" + std::to_string(d.cin) + ")");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.cout)) {
    throw DimensionError("conv2d: bias axis 0 must equal kernel axis 3");
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be positive");
  if (padding < 0) throw DimensionError("conv2d: padding must be non-negative");
  d.oh = (d.h + 2 * padding - d.k) / stride + 1;
  d.ow = (d.w + 2 * padding - d.k) / stride + 1;
  if (d.h + 2 * padding - d.k < 0 || d.oh < 1 || d.ow < 1) {
    throw DimensionError("conv2d: output would be empty for input " + shape_to_string(input.shape()) +
                         " kernel " + shape_to_string(kernel.shape()));
  }
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, PadMode pad_mode) {
  const ConvDims d = conv_dims(input, kernel, bias, stride, padding);
  const double* in = input.values().data();
  const double* ker = kernel.values().data();
  const double* bs = bias.defined() ? bias.values().data() : nullptr;
  std::vector<double> out(static_cast<std::size_t>(d.oh) * d.ow * d.cout);
  std::vector<double> acc(static_cast<std::size_t>(d.cout));

  for (int oy = 0; oy < d.oh; ++oy) {
    for (int ox = 0; ox < d.ow; ++ox) {
      if (bs) {
        std::copy(bs, bs + d.cout, acc.begin());
      } else {
        std::fill(acc.begin(), acc.end(), 0.0);
      }
      for (int ky = 0; ky < d.k; ++ky) {
        int iy = oy * stride + ky - padding;
        if (pad_mode == PadMode::kReplicate) {
          iy = std::clamp(iy, 0, d.h - 1);
        } else if (iy < 0 || iy >= d.h) {
          continue;
        }
        for (int kx = 0; kx < d.k; ++kx) {
          int ix = ox * stride + kx - padding;
          if (pad_mode == PadMode::kReplicate) {
            ix = std::clamp(ix, 0, d.w - 1);
          } else if (ix < 0 || ix >= d.w) {
            continue;
          }
          const double* v = &in[(static_cast<std::size_t>(iy) * d.w + ix) * d.cin];
          const double* krow = &ker[((static_cast<std::size_t>(ky) * d.k + kx) * d.cin) * d.cout];
          for (int ci = 0; ci < d.cin; ++ci) {
            const double x = v[ci];
            const double* kr = &krow[static_cast<std::size_t>(ci) * d.cout];
            for (int co = 0; co < d.cout; ++co) acc[static_cast<std::size_t>(co)] += x * kr[co];
          }
        }
      }
      std::copy(acc.begin(), acc.end(),
                out.begin() + (static_cast<std::size_t>(oy) * d.ow + ox) * d.cout);
    }
  }

  std::vector<Tensor> parents = {input, kernel};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return Tensor::from_op(
      {d.oh, d.ow, d.cout}, std::move(out), std::move(parents),
      [d, stride, padding, pad_mode, has_bias](TensorNode& self) {
        TensorNode& pin = *self.parents[0];
        TensorNode& pker = *self.parents[1];
        TensorNode* pbias = has_bias ? self.parents[2].get() : nullptr;
        const bool want_in = pin.needs_grad;
        const bool want_ker = pker.needs_grad;
        const bool want_bias = pbias && pbias->needs_grad;
        if (want_in) pin.ensure_grad();
        if (want_ker) pker.ensure_grad();
        if (want_bias) pbias->ensure_grad();
        const double* in = pin.values.data();
        const double* ker = pker.values.data();
        for (int oy = 0; oy < d.oh; ++oy) {
          for (int ox = 0; ox < d.ow; ++ox) {
            const double* g = &self.grad[(static_cast<std::size_t>(oy) * d.ow + ox) * d.cout];
            if (want_bias) {
              for (int co = 0; co < d.cout; ++co) pbias->grad[static_cast<std::size_t>(co)] += g[co];
            }
            for (int ky = 0; ky < d.k; ++ky) {
              int iy = oy * stride + ky - padding;
              if (pad_mode == PadMode::kReplicate) {
                iy = std::clamp(iy, 0, d.h - 1);
              } else if (iy < 0 || iy >= d.h) {
                continue;
              }
              for (int kx = 0; kx < d.k; ++kx) {
                int ix = ox * stride + kx - padding;
                if (pad_mode == PadMode::kReplicate) {
                  ix = std::clamp(ix, 0, d.w - 1);
                } else if (ix < 0 || ix >= d.w) {
                  continue;
                }
                const std::size_t in_base = (static_cast<std::size_t>(iy) * d.w + ix) * d.cin;
                const std::size_t k_base = ((static_cast<std::size_t>(ky) * d.k + kx) * d.cin) * d.cout;
                if (want_ker) {
                  for (int ci = 0; ci < d.cin; ++ci) {
                    const double x = in[in_base + static_cast<std::size_t>(ci)];
                    double* dk = &pker.grad[k_base + static_cast<std::size_t>(ci) * d.cout];
                    for (int co = 0; co < d.cout; ++co) dk[co] += x * g[co];
                  }
                }
                if (want_in) {
                  for (int ci = 0; ci < d.cin; ++ci) {
                    const double* kr = &ker[k_base + static_cast<std::size_t>(ci) * d.cout];
                    double s = 0.0;
                    for (int co = 0; co < d.cout; ++co) s += kr[co] * g[co];
                    pin.grad[in_base + static_cast<std::size_t>(ci)] += s;
                  }
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// bilinear_sample

Tensor bilinear_sample(const Tensor& grid, const Tensor& locations, Border border) {
  if (grid.rank() != 3) {
    throw DimensionError("bilinear_sample: grid must be (h, w, d), got " +
                         shape_to_string(grid.shape()));
  }
  if (locations.rank() != 2 || locations.dim(1) != 2) {
    throw DimensionError("bilinear_sample: locations must be (m, 2), got " +
                         shape_to_string(locations.shape()));
  }
  const int h = grid.dim(0), w = grid.dim(1), d = grid.dim(2);
  const int m = locations.dim(0);
  const double* gv = grid.values().data();
  const double* lv = locations.values().data();
  std::vector<double> out(static_cast<std::size_t>(m) * d, 0.0);

  for (int i = 0; i < m; ++i) {
    const double x = lv[2 * i];
    const double y = lv[2 * i + 1];
    double* o = &out[static_cast<std::size_t>(i) * d];
    if (border == Border::kClamp) {
      const Taps t = make_taps(x, y, h, w, d);
      for (int c = 0; c < d; ++c) o[c] = tap_value(gv, t, c);
    } else {
      const int x0 = static_cast<int>(std::floor(x));
      const int y0 = static_cast<int>(std::floor(y));
      const double wx = x - x0;
      const double wy = y - y0;
      for (int dy = 0; dy < 2; ++dy) {
        const int yy = y0 + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = 0; dx < 2; ++dx) {
          const int xx = x0 + dx;
          if (xx < 0 || xx >= w) continue;
          const double wgt = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy);
          const double* v = &gv[(static_cast<std::size_t>(yy) * w + xx) * d];
          for (int c = 0; c < d; ++c) o[c] += wgt * v[c];
        }
      }
    }
  }

  return Tensor::from_op(
      {m, d}, std::move(out), {grid, locations},
      [h, w, d, m, border](TensorNode& self) {
        TensorNode& pg = *self.parents[0];
        TensorNode& pl = *self.parents[1];
        const bool want_grid = pg.needs_grad;
        const bool want_loc = pl.needs_grad;
        if (want_grid) pg.ensure_grad();
        if (want_loc) pl.ensure_grad();
        const double* gv = pg.values.data();
        const double* lv = pl.values.data();
        for (int i = 0; i < m; ++i) {
          const double x = lv[2 * i];
          const double y = lv[2 * i + 1];
          const double* g = &self.grad[static_cast<std::size_t>(i) * d];
          if (border == Border::kClamp) {
            const Taps t = make_taps(x, y, h, w, d);
            const double w00 = (1.0 - t.wx) * (1.0 - t.wy);
            const double w01 = t.wx * (1.0 - t.wy);
            const double w10 = (1.0 - t.wx) * t.wy;
            const double w11 = t.wx * t.wy;
            double dx_acc = 0.0, dy_acc = 0.0;
            for (int c = 0; c < d; ++c) {
              const double gc = g[c];
              if (want_grid) {
                pg.grad[t.i00 + static_cast<std::size_t>(c)] += gc * w00;
                pg.grad[t.i01 + static_cast<std::size_t>(c)] += gc * w01;
                pg.grad[t.i10 + static_cast<std::size_t>(c)] += gc * w10;
                pg.grad[t.i11 + static_cast<std::size_t>(c)] += gc * w11;
              }
              if (want_loc) {
                dx_acc += gc * tap_dx(gv, t, c);
                dy_acc += gc * tap_dy(gv, t, c);
              }
            }
            if (want_loc) {
              if (t.x_in) pl.grad[2 * static_cast<std::size_t>(i)] += dx_acc;
              if (t.y_in) pl.grad[2 * static_cast<std::size_t>(i) + 1] += dy_acc;
            }
          } else {
            const int x0 = static_cast<int>(std::floor(x));
            const int y0 = static_cast<int>(std::floor(y));
            const double wx = x - x0;
            const double wy = y - y0;
            double dx_acc = 0.0, dy_acc = 0.0;
            for (int dy2 = 0; dy2 < 2; ++dy2) {
              const int yy = y0 + dy2;
              if (yy < 0 || yy >= h) continue;
              for (int dx2 = 0; dx2 < 2; ++dx2) {
                const int xx = x0 + dx2;
                if (xx < 0 || xx >= w) continue;
                const double wgt = (dx2 ? wx : 1.0 - wx) * (dy2 ? wy : 1.0 - wy);
                const std::size_t base = (static_cast<std::size_t>(yy) * w + xx) * d;
                for (int c = 0; c < d; ++c) {
                  const double gc = g[c];
                  if (want_grid) pg.grad[base + static_cast<std::size_t>(c)] += gc * wgt;
                  if (want_loc) {
                    const double v = gv[base + static_cast<std::size_t>(c)];
                    const double sx = dx2 ? 1.0 : -1.0;
                    const double sy = dy2 ? 1.0 : -1.0;
                    dx_acc += gc * v * sx * (dy2 ? wy : 1.0 - wy);
                    dy_acc += gc * v * sy * (dx2 ? wx : 1.0 - wx);
                  }
                }
              }
            }
            if (want_loc) {
              pl.grad[2 * static_cast<std::size_t>(i)] += dx_acc;
              pl.grad[2 * static_cast<std::size_t>(i) + 1] += dy_acc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape utilities

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw DimensionError("concat_last: spatial dims differ, " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  std::vector<double> out(static_cast<std::size_t>(h) * w * (ca + cb));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int p = 0; p < h * w; ++p) {
    std::copy(&av[static_cast<std::size_t>(p) * ca], &av[static_cast<std::size_t>(p) * ca] + ca,
              &out[static_cast<std::size_t>(p) * (ca + cb)]);
    std::copy(&bv[static_cast<std::size_t>(p) * cb], &bv[static_cast<std::size_t>(p) * cb] + cb,
              &out[static_cast<std::size_t>(p) * (ca + cb) + ca]);
  }
  return Tensor::from_op({h, w, ca + cb}, std::move(out), {a, b},
                         [h, w, ca, cb](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.needs_grad) pa.ensure_grad();
    if (pb.needs_grad) pb.ensure_grad();
    for (int p = 0; p < h * w; ++p) {
      const double* g = &self.grad[static_cast<std::size_t>(p) * (ca + cb)];
      if (pa.needs_grad) {
        double* ga = &pa.grad[static_cast<std::size_t>(p) * ca];
        for (int c = 0; c < ca; ++c) ga[c] += g[c];
      }
      if (pb.needs_grad) {
        double* gb = &pb.grad[static_cast<std::size_t>(p) * cb];
        for (int c = 0; c < cb; ++c) gb[c] += g[ca + c];
      }
    }
  });
}

Tensor slice_last(const Tensor& a, int from, int count) {
  if (a.rank() < 1) throw DimensionError("slice_last: rank-0 tensor");
  const int c = a.dim(a.rank() - 1);
  if (from < 0 || count < 1 || from + count > c) {
    throw DimensionError("slice_last: range [" + std::to_string(from) + ", " +
                         std::to_string(from + count) + ") outside axis of size " + std::to_string(c));
  }
  const std::size_t rows = a.size() / static_cast<std::size_t>(c);
  std::vector<double> out(rows * static_cast<std::size_t>(count));
  const auto& av = a.values();
  for (std::size_t rw = 0; rw < rows; ++rw) {
    std::copy(&av[rw * c + static_cast<std::size_t>(from)],
              &av[rw * c + static_cast<std::size_t>(from + count)],
              &out[rw * static_cast<std::size_t>(count)]);
  }
  std::vector<int> shape = a.shape();
  shape.back() = count;
  return Tensor::from_op(std::move(shape), std::move(out), {a},
                         [c, from, count, rows](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (std::size_t rw = 0; rw < rows; ++rw) {
      for (int j = 0; j < count; ++j) {
        p.grad[rw * c + static_cast<std::size_t>(from + j)] +=
            self.grad[rw * static_cast<std::size_t>(count) + static_cast<std::size_t>(j)];
      }
    }
  });
}

Tensor upsample_nearest(const Tensor& a, int out_h, int out_w) {
  if (a.rank() != 3) throw DimensionError("upsample_nearest: input must be (h, w, c)");
  if (out_h < 1 || out_w < 1) throw DimensionError("upsample_nearest: empty output");
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * c);
  const auto& av = a.values();
  for (int oy = 0; oy < out_h; ++oy) {
    const int iy = static_cast<int>(static_cast<std::int64_t>(oy) * h / out_h);
    for (int ox = 0; ox < out_w; ++ox) {
      const int ix = static_cast<int>(static_cast<std::int64_t>(ox) * w / out_w);
      std::copy(&av[(static_cast<std::size_t>(iy) * w + ix) * c],
                &av[(static_cast<std::size_t>(iy) * w + ix) * c] + c,
                &out[(static_cast<std::size_t>(oy) * out_w + ox) * c]);
    }
  }
  return Tensor::from_op({out_h, out_w, c}, std::move(out), {a},
                         [h, w, c, out_h, out_w](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.needs_grad) return;
    p.ensure_grad();
    for (int oy = 0; oy < out_h; ++oy) {
      const int iy = static_cast<int>(static_cast<std::int64_t>(oy) * h / out_h);
      for (int ox = 0; ox < out_w; ++ox) {
        const int ix = static_cast<int>(static_cast<std::int64_t>(ox) * w / out_w);
        const double* g = &self.grad[(static_cast<std::size_t>(oy) * out_w + ox) * c];
        double* pg = &p.grad[(static_cast<std::size_t>(iy) * w + ix) * c];
        for (int ch = 0; ch < c; ++ch) pg[ch] += g[ch];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double gc_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

double grad_check_impl(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                       std::vector<Tensor>& inputs, double eps,
                       const std::vector<std::pair<std::size_t, std::size_t>>& elements) {
  zero_grad(inputs);
  Tensor loss = f(inputs);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& t : inputs) analytic.push_back(t.grad());

  double worst = 0.0;
  for (const auto& [ti, ei] : elements) {
    Tensor& t = inputs[ti];
    double* slot = &t.mutable_values()[ei];
    const double saved = *slot;
    double lo, hi;
    {
      NoGradGuard ng;
      *slot = saved + eps;
      hi = f(inputs).item();
      *slot = saved - eps;
      lo = f(inputs).item();
      *slot = saved;
    }
    const double numeric = (hi - lo) / (2.0 * eps);
    worst = std::max(worst, gc_error(analytic[ti][ei], numeric));
  }
  return worst;
}

}  // namespace

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double eps) {
  std::vector<std::pair<std::size_t, std::size_t>> elements;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    for (std::size_t ei = 0; ei < inputs[ti].size(); ++ei) elements.emplace_back(ti, ei);
  }
  if (elements.empty()) throw UsageError("grad_check: no input requires grad");
  return grad_check_impl(f, inputs, eps, elements);
}

double grad_check_sampled(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs, double eps, int samples,
                          std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    for (std::size_t ei = 0; ei < inputs[ti].size(); ++ei) all.emplace_back(ti, ei);
  }
  if (all.empty()) throw UsageError("grad_check_sampled: no input requires grad");
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  const int n = std::min<int>(samples, static_cast<int>(all.size()));
  for (int i = 0; i < n; ++i) {
    chosen.push_back(all[static_cast<std::size_t>(rng.below(all.size()))]);
  }
  return grad_check_impl(f, inputs, eps, chosen);
}

}  // namespace rtn
