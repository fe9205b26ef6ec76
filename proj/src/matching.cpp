#include "rtn/matching.hpp"

#include <algorithm>
#include <cmath>

namespace rtn {

Tensor correlation(const FeatureMap& source, const FeatureMap& target_transformed,
                   const WindowSpec& window, double eps) {
  const Tensor& s = source.data;
  const Tensor& t = target_transformed.data;
  if (s.shape() != t.shape()) {
    throw DimensionError("correlation: feature grids differ, " + shape_to_string(s.shape()) +
                         " vs " + shape_to_string(t.shape()));
  }
  if (window.radius < 0 || window.stride < 1) {
    throw DimensionError("correlation: window radius must be >= 0 and stride >= 1");
  }
  const int h = s.dim(0), w = s.dim(1), d = s.dim(2);
  const int r = window.radius, st = window.stride;
  const int side = window.side(), n = window.count();
  const double* sv = s.values().data();
  const double* tv = t.values().data();

  std::vector<double> out(static_cast<std::size_t>(h) * w * n);
  std::vector<double> denoms(static_cast<std::size_t>(h) * w);  // denominators
  std::vector<char> normalized(static_cast<std::size_t>(h) * w);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* o = &out[(static_cast<std::size_t>(y) * w + x) * n];
      const double* sp = &sv[(static_cast<std::size_t>(y) * w + x) * d];
      double sq = 0.0;
      for (int oy = -r; oy <= r; ++oy) {
        const int jy = std::clamp(y + st * oy, 0, h - 1);
        for (int ox = -r; ox <= r; ++ox) {
          const int jx = std::clamp(x + st * ox, 0, w - 1);
          const double* tp = &tv[(static_cast<std::size_t>(jy) * w + jx) * d];
          double dot = 0.0;
          for (int c = 0; c < d; ++c) dot += sp[c] * tp[c];
          o[(oy + r) * side + (ox + r)] = dot;
          sq += dot * dot;
        }
      }
      const double root = std::sqrt(sq);
      const bool ok = root > eps;
      const double denom = ok ? root : eps;
      const std::size_t pi = static_cast<std::size_t>(y) * w + x;
      denoms[pi] = denom;
      normalized[pi] = ok ? 1 : 0;
      const double inv = 1.0 / denom;
      for (int i = 0; i < n; ++i) o[i] *= inv;
    }
  }

  return Tensor::from_op(
      {h, w, n}, std::move(out), {s, t},
      [h, w, d, r, st, side, n, den = std::move(denoms),
       norm = std::move(normalized)](detail::TensorNode& self) {
        detail::TensorNode& ps = *self.parents[0];
        detail::TensorNode& pt = *self.parents[1];
        const bool want_s = ps.needs_grad;
        const bool want_t = pt.needs_grad;
        if (want_s) ps.ensure_grad();
        if (want_t) pt.ensure_grad();
        const double* sv = ps.values.data();
        const double* tv = pt.values.data();
        std::vector<double> draw(static_cast<std::size_t>(n));
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const std::size_t pi = static_cast<std::size_t>(y) * w + x;
            const double* o = &self.values[pi * n];
            const double* g = &self.grad[pi * n];
            const double inv = 1.0 / den[pi];
            if (norm[pi]) {
              double dot = 0.0;
              for (int i = 0; i < n; ++i) dot += g[i] * o[i];
              for (int i = 0; i < n; ++i) draw[static_cast<std::size_t>(i)] = (g[i] - o[i] * dot) * inv;
            } else {
              for (int i = 0; i < n; ++i) draw[static_cast<std::size_t>(i)] = g[i] * inv;
            }
            const double* sp = &sv[pi * d];
            double* sg = want_s ? &ps.grad[pi * d] : nullptr;
            for (int oy = -r; oy <= r; ++oy) {
              const int jy = std::clamp(y + st * oy, 0, h - 1);
              for (int ox = -r; ox <= r; ++ox) {
                const int jx = std::clamp(x + st * ox, 0, w - 1);
                const double dr = draw[static_cast<std::size_t>((oy + r) * side + (ox + r))];
                const std::size_t tb = (static_cast<std::size_t>(jy) * w + jx) * d;
                if (want_s) {
                  for (int c = 0; c < d; ++c) sg[c] += dr * tv[tb + static_cast<std::size_t>(c)];
                }
                if (want_t) {
                  for (int c = 0; c < d; ++c) pt.grad[tb + static_cast<std::size_t>(c)] += dr * sp[c];
                }
              }
            }
          }
        }
      });
}

std::vector<std::pair<std::string, Tensor>> MatcherParams::named_parameters() const {
  return {{"match.enc1.kernel", ke1}, {"match.enc1.bias", be1}, {"match.enc2.kernel", ke2},
          {"match.enc2.bias", be2},   {"match.dec1.kernel", kd1}, {"match.dec1.bias", bd1},
          {"match.dec2.kernel", kd2}, {"match.dec2.bias", bd2},   {"match.out.kernel", kout},
          {"match.out.bias", bout}};
}

namespace {

Tensor init_kernel(Rng& rng, int k, int cin, int cout) {
  const double limit = std::sqrt(3.0 / (k * k * cin));
  std::vector<double> vals(static_cast<std::size_t>(k) * k * cin * cout);
  for (auto& v : vals) v = rng.uniform(-limit, limit);
  return Tensor::from_values({k, k, cin, cout}, std::move(vals), true);
}

}  // namespace

MatcherParams make_matcher(Rng& rng, int input_channels) {
  MatcherParams p;
  p.ke1 = init_kernel(rng, 3, input_channels, 64);
  p.be1 = Tensor::zeros({64}, true);
  p.ke2 = init_kernel(rng, 3, 64, 128);
  p.be2 = Tensor::zeros({128}, true);
  p.kd1 = init_kernel(rng, 3, 128 + 64, 64);
  p.bd1 = Tensor::zeros({64}, true);
  p.kd2 = init_kernel(rng, 3, 64 + input_channels, 32);
  p.bd2 = Tensor::zeros({32}, true);
  p.kout = Tensor::zeros({3, 3, 32, 6}, true);  // zero start: first residual is exactly zero
  p.bout = Tensor::zeros({6}, true);
  return p;
}

AffineField estimate_residual(const Tensor& volume, const MatcherParams& params) {
  if (volume.rank() != 3 || volume.dim(2) != params.input_channels()) {
    throw DimensionError("estimate_residual: volume channels " + shape_to_string(volume.shape()) +
                         " do not match matcher input " + std::to_string(params.input_channels()));
  }
  Tensor e1 = relu(conv2d(volume, params.ke1, params.be1, 2, 1));
  Tensor e2 = relu(conv2d(e1, params.ke2, params.be2, 2, 1));
  Tensor u1 = upsample_nearest(e2, e1.dim(0), e1.dim(1));
  Tensor d1 = relu(conv2d(concat_last(u1, e1), params.kd1, params.bd1, 1, 1));
  Tensor u2 = upsample_nearest(d1, volume.dim(0), volume.dim(1));
  Tensor d2 = relu(conv2d(concat_last(u2, volume), params.kd2, params.bd2, 1, 1));
  Tensor res = conv2d(d2, params.kout, params.bout, 1, 1);
  return AffineField(res);
}

void RecurrenceConfig::validate() const {
  if (k_max < 1) throw ConfigError("recurrence: k_max must be >= 1");
  if (window_radius < 1) throw ConfigError("recurrence: window radius must be >= 1");
  if (static_cast<int>(dilation_schedule.size()) != k_max) {
    throw ConfigError("recurrence: dilation schedule length " +
                      std::to_string(dilation_schedule.size()) + " != k_max " +
                      std::to_string(k_max));
  }
  for (std::size_t i = 0; i < dilation_schedule.size(); ++i) {
    if (dilation_schedule[i] < 1) throw ConfigError("recurrence: dilation stride must be >= 1");
    if (i > 0 && dilation_schedule[i] > dilation_schedule[i - 1]) {
      throw ConfigError("recurrence: dilation schedule must be non-increasing");
    }
  }
}

int RecurrenceConfig::dilation_at(int k) const {
  if (dilation_schedule.empty()) return 1;
  const int idx = std::min<int>(k, static_cast<int>(dilation_schedule.size()) - 1);
  return dilation_schedule[static_cast<std::size_t>(idx)];
}

RecurrenceResult run_recurrence(const Tensor& source_img, const Tensor& target_img,
                                const FeatureNetParams& feat, const MatcherParams& match,
                                const RecurrenceConfig& cfg) {
  cfg.validate();
  if (source_img.shape() != target_img.shape()) {
    throw DimensionError("run_recurrence: image shapes differ, " +
                         shape_to_string(source_img.shape()) + " vs " +
                         shape_to_string(target_img.shape()));
  }
  RecurrenceResult result;
  result.source_features = extract(source_img, feat);
  result.target_trunk = extract_trunk(target_img, feat);

  const int hf = result.target_trunk.dim(0);
  const int wf = result.target_trunk.dim(1);
  AffineField field = identity_field(hf, wf);
  result.trajectory.push_back(field);

  for (int k = 0; k < cfg.k_max; ++k) {
    FeatureMap dt = extract_transformed_from_trunk(result.target_trunk, field, feat);
    WindowSpec window{cfg.window_radius, cfg.dilation_at(k)};
    Tensor volume = correlation(result.source_features, dt, window, cfg.correlation_eps);
    AffineField residual = estimate_residual(volume, match);
    field = add_residual(field, residual);
    result.volumes.push_back(std::move(volume));
    result.trajectory.push_back(field);
  }
  result.final_field = field;
  return result;
}

}  // namespace rtn
