#include "rtn/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "rtn/interp.hpp"

namespace rtn {

namespace {

double sample_clamped(const double* data, int h, int w, int channels, double x, double y, int c) {
  return tap_value(data, make_taps(x, y, h, w, channels), c);
}

}  // namespace

AffineField::AffineField(Tensor p) : params(std::move(p)) {
  if (params.rank() != 3 || params.dim(2) != 6) {
    throw DimensionError("AffineField: params must be (h, w, 6), got " +
                         shape_to_string(params.shape()));
  }
}

void AffineField::fetch(int y, int x, double out[6]) const {
  const double* v = &params.values()[(static_cast<std::size_t>(y) * width() + x) * 6];
  for (int i = 0; i < 6; ++i) out[i] = v[i];
}

AffineField identity_field(int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("identity_field: grid must be at least 1x1");
  std::vector<double> vals(static_cast<std::size_t>(h) * w * 6, 0.0);
  for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) {
    vals[p * 6 + 0] = 1.0;
    vals[p * 6 + 3] = 1.0;
  }
  return AffineField(Tensor::from_values({h, w, 6}, std::move(vals)));
}

AffineField add_residual(const AffineField& base, const AffineField& residual) {
  if (base.height() != residual.height() || base.width() != residual.width()) {
    throw DimensionError("add_residual: grid mismatch " + shape_to_string(base.params.shape()) +
                         " vs " + shape_to_string(residual.params.shape()));
  }
  return AffineField(add(base.params, residual.params));
}

PixelCoord transform_offset(const AffineField& field, const PixelCoord& i, const Vec2& delta) {
  const int x = static_cast<int>(i.x);
  const int y = static_cast<int>(i.y);
  double t[6];
  field.fetch(y, x, t);
  PixelCoord out;
  out.x = i.x + t[4] + t[0] * delta.x + t[1] * delta.y;
  out.y = i.y + t[5] + t[2] * delta.x + t[3] * delta.y;
  return out;
}

FlowField flow_of(const AffineField& field) {
  FlowField flow(field.height(), field.width());
  const auto& v = field.params.values();
  for (int y = 0; y < field.height(); ++y) {
    for (int x = 0; x < field.width(); ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * field.width() + x) * 6;
      flow.set(y, x, v[base + 4], v[base + 5]);
    }
  }
  return flow;
}

AffineField upsample_field(const AffineField& field, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw DimensionError("upsample_field: empty target grid");
  const int h = field.height(), w = field.width();
  const double ry = static_cast<double>(target_h) / h;
  const double rx = static_cast<double>(target_w) / w;
  const double* src = field.params.values().data();
  std::vector<double> vals(static_cast<std::size_t>(target_h) * target_w * 6);
  for (int y = 0; y < target_h; ++y) {
    // Align pixel centers between the two grids.
    const double fy = (y + 0.5) / ry - 0.5;
    for (int x = 0; x < target_w; ++x) {
      const double fx = (x + 0.5) / rx - 0.5;
      double* out = &vals[(static_cast<std::size_t>(y) * target_w + x) * 6];
      for (int c = 0; c < 6; ++c) out[c] = sample_clamped(src, h, w, 6, fx, fy, c);
      out[4] *= rx;
      out[5] *= ry;
    }
  }
  return AffineField(Tensor::from_values({target_h, target_w, 6}, std::move(vals)));
}

Image warp_image(const Image& source, const FlowField& flow) {
  if (flow.height != source.height || flow.width != source.width) {
    throw DimensionError("warp_image: flow grid does not match image grid");
  }
  Image out(flow.height, flow.width);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const double sx = x + flow.u(y, x);
      const double sy = y + flow.v(y, x);
      for (int c = 0; c < 3; ++c) {
        out.set(y, x, c, sample_clamped(source.pixels.data(), source.height, source.width, 3, sx, sy, c));
      }
    }
  }
  return out;
}

}  // namespace rtn
