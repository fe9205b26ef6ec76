#include "rtn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace rtn {

void LossConfig::validate() const {
  if (window_radius < 1) throw ConfigError("loss: window radius must be >= 1");
  if (pixels_per_pair < 1) throw ConfigError("loss: pixel sample count must be >= 1");
}

Tensor window_similarities(const FeatureMap& source, const FeatureMap& target_transformed,
                           const std::vector<std::pair<int, int>>& pixels_yx, int radius) {
  const Tensor& s = source.data;
  const Tensor& t = target_transformed.data;
  if (s.shape() != t.shape()) {
    throw DimensionError("window_similarities: feature grids differ");
  }
  if (pixels_yx.empty()) throw UsageError("window_similarities: empty pixel set");
  const int h = s.dim(0), w = s.dim(1), d = s.dim(2);
  const int r = radius, side = 2 * r + 1, n = side * side;
  const int m = static_cast<int>(pixels_yx.size());
  for (const auto& [y, x] : pixels_yx) {
    if (y < r || y >= h - r || x < r || x >= w - r) {
      throw UsageError("window_similarities: pixel (" + std::to_string(x) + ", " +
                       std::to_string(y) + ") too close to the border for radius " +
                       std::to_string(r));
    }
  }
  const double* sv = s.values().data();
  const double* tv = t.values().data();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int p = 0; p < m; ++p) {
    const auto [y, x] = pixels_yx[static_cast<std::size_t>(p)];
    const double* sp = &sv[(static_cast<std::size_t>(y) * w + x) * d];
    double* o = &out[static_cast<std::size_t>(p) * n];
    for (int oy = -r; oy <= r; ++oy) {
      for (int ox = -r; ox <= r; ++ox) {
        const double* tp = &tv[(static_cast<std::size_t>(y + oy) * w + (x + ox)) * d];
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += sp[c] * tp[c];
        o[(oy + r) * side + (ox + r)] = dot;
      }
    }
  }
  return Tensor::from_op(
      {m, n}, std::move(out), {s, t},
      [w, d, r, side, n, pixels = pixels_yx](detail::TensorNode& self) {
        detail::TensorNode& ps = *self.parents[0];
        detail::TensorNode& pt = *self.parents[1];
        const bool want_s = ps.needs_grad;
        const bool want_t = pt.needs_grad;
        if (want_s) ps.ensure_grad();
        if (want_t) pt.ensure_grad();
        const double* sv = ps.values.data();
        const double* tv = pt.values.data();
        for (std::size_t p = 0; p < pixels.size(); ++p) {
          const auto [y, x] = pixels[p];
          const std::size_t sb = (static_cast<std::size_t>(y) * w + x) * d;
          const double* g = &self.grad[p * n];
          for (int oy = -r; oy <= r; ++oy) {
            for (int ox = -r; ox <= r; ++ox) {
              const double gr = g[(oy + r) * side + (ox + r)];
              const std::size_t tb = (static_cast<std::size_t>(y + oy) * w + (x + ox)) * d;
              if (want_s) {
                for (int c = 0; c < d; ++c) {
                  ps.grad[sb + static_cast<std::size_t>(c)] += gr * tv[tb + static_cast<std::size_t>(c)];
                }
              }
              if (want_t) {
                for (int c = 0; c < d; ++c) {
                  pt.grad[tb + static_cast<std::size_t>(c)] += gr * sv[sb + static_cast<std::size_t>(c)];
                }
              }
            }
          }
        }
      });
}

Tensor rows_unit_norm(const Tensor& rows, double eps) {
  if (rows.rank() != 2) throw DimensionError("rows_unit_norm: expected (m, n)");
  const int m = rows.dim(0), n = rows.dim(1);
  const double* rv = rows.values().data();
  std::vector<double> out(rows.size());
  std::vector<double> denoms(static_cast<std::size_t>(m));
  std::vector<char> normalized(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = &rv[static_cast<std::size_t>(i) * n];
    double sq = 0.0;
    for (int j = 0; j < n; ++j) sq += row[j] * row[j];
    const double root = std::sqrt(sq);
    const bool ok = root > eps;
    const double denom = ok ? root : eps;
    denoms[static_cast<std::size_t>(i)] = denom;
    normalized[static_cast<std::size_t>(i)] = ok ? 1 : 0;
    const double inv = 1.0 / denom;
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] = row[j] * inv;
  }
  return Tensor::from_op(
      {m, n}, std::move(out), {rows},
      [m, n, den = std::move(denoms), norm = std::move(normalized)](detail::TensorNode& self) {
        detail::TensorNode& p = *self.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * n;
          const double inv = 1.0 / den[static_cast<std::size_t>(i)];
          if (norm[static_cast<std::size_t>(i)]) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += self.grad[base + static_cast<std::size_t>(j)] * self.values[base + static_cast<std::size_t>(j)];
            for (int j = 0; j < n; ++j) {
              p.grad[base + static_cast<std::size_t>(j)] +=
                  (self.grad[base + static_cast<std::size_t>(j)] -
                   self.values[base + static_cast<std::size_t>(j)] * dot) * inv;
            }
          } else {
            for (int j = 0; j < n; ++j) {
              p.grad[base + static_cast<std::size_t>(j)] += self.grad[base + static_cast<std::size_t>(j)] * inv;
            }
          }
        }
      });
}

Tensor cross_entropy_center(const Tensor& sims, int center_index) {
  if (sims.rank() != 2) throw DimensionError("cross_entropy_center: expected (m, n)");
  const int m = sims.dim(0), n = sims.dim(1);
  if (center_index < 0 || center_index >= n) {
    throw DimensionError("cross_entropy_center: center index out of range");
  }
  const double* sv = sims.values().data();
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* row = &sv[static_cast<std::size_t>(i) * n];
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[center_index];
  }
  const double inv_m = 1.0 / m;
  return Tensor::from_op(
      {1}, {total * inv_m}, {sims}, [m, n, center_index, inv_m](detail::TensorNode& self) {
        detail::TensorNode& p = *self.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        const double g = self.grad[0] * inv_m;
        for (int i = 0; i < m; ++i) {
          const double* row = &p.values[static_cast<std::size_t>(i) * n];
          double mx = row[0];
          for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
          double z = 0.0;
          for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
          const double invz = 1.0 / z;
          for (int j = 0; j < n; ++j) {
            const double soft = std::exp(row[j] - mx) * invz;
            p.grad[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] +=
                g * (soft - (j == center_index ? 1.0 : 0.0));
          }
        }
      });
}

Tensor match_probability(const FeatureMap& source, const FeatureMap& target_transformed,
                         int pixel_y, int pixel_x, const WindowSpec& window,
                         bool window_normalized) {
  Tensor sims = window_similarities(source, target_transformed, {{pixel_y, pixel_x}},
                                    window.radius);
  if (window_normalized) sims = rows_unit_norm(sims);
  return softmax(sims, 1);
}

Tensor classification_loss(const FeatureMap& source, const FeatureMap& target_transformed,
                           const std::vector<std::pair<int, int>>& pixels_yx,
                           const LossConfig& cfg) {
  cfg.validate();
  if (pixels_yx.empty()) throw UsageError("classification_loss: empty pixel set");
  Tensor sims = window_similarities(source, target_transformed, pixels_yx, cfg.window_radius);
  if (cfg.window_normalized) sims = rows_unit_norm(sims);
  const int side = 2 * cfg.window_radius + 1;
  const int center = (side * side) / 2;
  return cross_entropy_center(sims, center);
}

std::vector<std::pair<int, int>> sample_loss_pixels(int h, int w, int radius, int count, Rng& rng) {
  if (count < 1) throw UsageError("sample_loss_pixels: count must be >= 1");
  const int y_lo = radius, y_hi = h - radius;  // exclusive
  const int x_lo = radius, x_hi = w - radius;
  if (y_hi <= y_lo || x_hi <= x_lo) {
    throw UsageError("sample_loss_pixels: grid " + std::to_string(w) + "x" + std::to_string(h) +
                     " has no interior pixels for radius " + std::to_string(radius));
  }
  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int y = y_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(y_hi - y_lo)));
    const int x = x_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(x_hi - x_lo)));
    pixels.emplace_back(y, x);
  }
  return pixels;
}

}  // namespace rtn
