#include "rtn/features.hpp"

#include <algorithm>
#include <cmath>

#include "rtn/interp.hpp"

namespace rtn {

namespace {

Tensor init_kernel(Rng& rng, int k, int cin, int cout) {
  const double limit = std::sqrt(3.0 / (k * k * cin));
  std::vector<double> vals(static_cast<std::size_t>(k) * k * cin * cout);
  for (auto& v : vals) v = rng.uniform(-limit, limit);
  return Tensor::from_values({k, k, cin, cout}, std::move(vals), true);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> FeatureNetParams::named_parameters() const {
  return {{"feat.conv1.kernel", k1}, {"feat.conv1.bias", b1}, {"feat.conv2.kernel", k2},
          {"feat.conv2.bias", b2},   {"feat.conv3.kernel", k3}, {"feat.conv3.bias", b3},
          {"feat.conv4.kernel", k4}, {"feat.conv4.bias", b4}};
}

FeatureNetParams make_feature_net(Rng& rng, int descriptor_dim) {
  FeatureNetParams p;
  p.k1 = init_kernel(rng, 3, 3, 16);
  p.b1 = Tensor::zeros({16}, true);
  p.k2 = init_kernel(rng, 3, 16, 32);
  p.b2 = Tensor::zeros({32}, true);
  p.k3 = init_kernel(rng, 3, 32, 32);
  p.b3 = Tensor::zeros({32}, true);
  p.k4 = init_kernel(rng, 3, 32, descriptor_dim);
  p.b4 = Tensor::zeros({descriptor_dim}, true);
  return p;
}

int feature_grid_extent(int n) {
  // 3x3 convs with pad 1: stride 1, then stride 2 twice.
  const int a = (n + 2 - 3) / 2 + 1;
  return (a + 2 - 3) / 2 + 1;
}

Tensor image_to_tensor(const Image& img) {
  return Tensor::from_values({img.height, img.width, 3},
                             std::vector<double>(img.pixels.begin(), img.pixels.end()));
}

Tensor extract_trunk(const Tensor& image, const FeatureNetParams& params) {
  Tensor x = relu(conv2d(image, params.k1, params.b1, 1, 1, PadMode::kZero));
  x = relu(conv2d(x, params.k2, params.b2, 2, 1, PadMode::kZero));
  x = relu(conv2d(x, params.k3, params.b3, 2, 1, PadMode::kZero));
  return x;
}

FeatureMap extract(const Tensor& image, const FeatureNetParams& params) {
  Tensor trunk = extract_trunk(image, params);
  Tensor out = conv2d(trunk, params.k4, params.b4, 1, 1, PadMode::kReplicate);
  return FeatureMap(l2_normalize_last(out));
}

FeatureMap extract(const Image& image, const FeatureNetParams& params) {
  return extract(image_to_tensor(image), params);
}

namespace {

// Gathered 3x3 convolution over trunk activations with per-pixel affine
// offsets. Output matches conv2d(trunk, k, b, 1, 1, kReplicate) exactly
// when the field is the identity.
Tensor transformed_conv(const Tensor& trunk, const Tensor& field_params, const Tensor& kernel,
                        const Tensor& bias) {
  const int h = trunk.dim(0), w = trunk.dim(1), cin = trunk.dim(2);
  const int k = kernel.dim(0), cout = kernel.dim(3);
  if (kernel.dim(2) != cin) {
    throw DimensionError("transformed_conv: kernel axis 2 does not match trunk channels");
  }
  if (field_params.dim(0) != h || field_params.dim(1) != w) {
    throw DimensionError("transformed_conv: field grid " + shape_to_string(field_params.shape()) +
                         " does not match trunk grid " + shape_to_string(trunk.shape()));
  }
  const int r = k / 2;
  const double* tv = trunk.values().data();
  const double* fv = field_params.values().data();
  const double* kv = kernel.values().data();
  const double* bv = bias.values().data();

  std::vector<double> out(static_cast<std::size_t>(h) * w * cout);
  std::vector<double> acc(static_cast<std::size_t>(cout));
  std::vector<double> val(static_cast<std::size_t>(cin));

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* f = &fv[(static_cast<std::size_t>(y) * w + x) * 6];
      std::copy(bv, bv + cout, acc.begin());
      for (int ky = 0; ky < k; ++ky) {
        const double dy = ky - r;
        for (int kx = 0; kx < k; ++kx) {
          const double dx = kx - r;
          const double lx = x + f[4] + f[0] * dx + f[1] * dy;
          const double ly = y + f[5] + f[2] * dx + f[3] * dy;
          const Taps t = make_taps(lx, ly, h, w, cin);
          for (int ci = 0; ci < cin; ++ci) val[static_cast<std::size_t>(ci)] = tap_value(tv, t, ci);
          const double* krow = &kv[((static_cast<std::size_t>(ky) * k + kx) * cin) * cout];
          for (int ci = 0; ci < cin; ++ci) {
            const double xv = val[static_cast<std::size_t>(ci)];
            const double* kr = &krow[static_cast<std::size_t>(ci) * cout];
            for (int co = 0; co < cout; ++co) acc[static_cast<std::size_t>(co)] += xv * kr[co];
          }
        }
      }
      std::copy(acc.begin(), acc.end(), out.begin() + (static_cast<std::size_t>(y) * w + x) * cout);
    }
  }

  return Tensor::from_op(
      {h, w, cout}, std::move(out), {trunk, field_params, kernel, bias},
      [h, w, cin, k, cout, r](detail::TensorNode& self) {
        detail::TensorNode& ptrunk = *self.parents[0];
        detail::TensorNode& pfield = *self.parents[1];
        detail::TensorNode& pker = *self.parents[2];
        detail::TensorNode& pbias = *self.parents[3];
        const bool want_trunk = ptrunk.needs_grad;
        const bool want_field = pfield.needs_grad;
        const bool want_ker = pker.needs_grad;
        const bool want_bias = pbias.needs_grad;
        if (want_trunk) ptrunk.ensure_grad();
        if (want_field) pfield.ensure_grad();
        if (want_ker) pker.ensure_grad();
        if (want_bias) pbias.ensure_grad();
        const double* tv = ptrunk.values.data();
        const double* fv = pfield.values.data();
        const double* kv = pker.values.data();
        std::vector<double> val(static_cast<std::size_t>(cin));
        std::vector<double> dval(static_cast<std::size_t>(cin));
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double* f = &fv[(static_cast<std::size_t>(y) * w + x) * 6];
            const double* g = &self.grad[(static_cast<std::size_t>(y) * w + x) * cout];
            if (want_bias) {
              for (int co = 0; co < cout; ++co) pbias.grad[static_cast<std::size_t>(co)] += g[co];
            }
            double* fg = want_field ? &pfield.grad[(static_cast<std::size_t>(y) * w + x) * 6] : nullptr;
            for (int ky = 0; ky < k; ++ky) {
              const double dy = ky - r;
              for (int kx = 0; kx < k; ++kx) {
                const double dx = kx - r;
                const double lx = x + f[4] + f[0] * dx + f[1] * dy;
                const double ly = y + f[5] + f[2] * dx + f[3] * dy;
                const Taps t = make_taps(lx, ly, h, w, cin);
                const std::size_t k_base = ((static_cast<std::size_t>(ky) * k + kx) * cin) * cout;
                for (int ci = 0; ci < cin; ++ci) val[static_cast<std::size_t>(ci)] = tap_value(tv, t, ci);
                for (int ci = 0; ci < cin; ++ci) {
                  const double* kr = &kv[k_base + static_cast<std::size_t>(ci) * cout];
                  double s = 0.0;
                  for (int co = 0; co < cout; ++co) s += kr[co] * g[co];
                  dval[static_cast<std::size_t>(ci)] = s;
                }
                if (want_ker) {
                  for (int ci = 0; ci < cin; ++ci) {
                    const double xv = val[static_cast<std::size_t>(ci)];
                    double* dk = &pker.grad[k_base + static_cast<std::size_t>(ci) * cout];
                    for (int co = 0; co < cout; ++co) dk[co] += xv * g[co];
                  }
                }
                if (want_trunk || want_field) {
                  const double w00 = (1.0 - t.wx) * (1.0 - t.wy);
                  const double w01 = t.wx * (1.0 - t.wy);
                  const double w10 = (1.0 - t.wx) * t.wy;
                  const double w11 = t.wx * t.wy;
                  double dlx = 0.0, dly = 0.0;
                  for (int ci = 0; ci < cin; ++ci) {
                    const double dv = dval[static_cast<std::size_t>(ci)];
                    if (want_trunk) {
                      ptrunk.grad[t.i00 + static_cast<std::size_t>(ci)] += dv * w00;
                      ptrunk.grad[t.i01 + static_cast<std::size_t>(ci)] += dv * w01;
                      ptrunk.grad[t.i10 + static_cast<std::size_t>(ci)] += dv * w10;
                      ptrunk.grad[t.i11 + static_cast<std::size_t>(ci)] += dv * w11;
                    }
                    if (want_field) {
                      dlx += dv * tap_dx(tv, t, ci);
                      dly += dv * tap_dy(tv, t, ci);
                    }
                  }
                  if (want_field) {
                    if (!t.x_in) dlx = 0.0;
                    if (!t.y_in) dly = 0.0;
                    fg[0] += dlx * dx;
                    fg[1] += dlx * dy;
                    fg[2] += dly * dx;
                    fg[3] += dly * dy;
                    fg[4] += dlx;
                    fg[5] += dly;
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace

FeatureMap extract_transformed_from_trunk(const Tensor& trunk, const AffineField& field,
                                          const FeatureNetParams& params) {
  Tensor out = transformed_conv(trunk, field.params, params.k4, params.b4);
  return FeatureMap(l2_normalize_last(out));
}

FeatureMap extract_transformed(const Image& image, const AffineField& field,
                               const FeatureNetParams& params) {
  Tensor trunk = extract_trunk(image_to_tensor(image), params);
  return extract_transformed_from_trunk(trunk, field, params);
}

}  // namespace rtn
