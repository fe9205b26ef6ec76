#ifndef RTN_GEOMETRY_HPP_
#define RTN_GEOMETRY_HPP_

#include <vector>

#include "rtn/image.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Dense displacement field on a pixel grid. The field is anchored on the
// grid of the image it was estimated for: grid point i corresponds to
// location i + f_i in the partner image.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<double> uv;  // height * width * 2, (u, v) per pixel

  FlowField() = default;
  FlowField(int h, int w) : height(h), width(w), uv(static_cast<std::size_t>(h) * w * 2, 0.0) {}

  double u(int y, int x) const { return uv[(static_cast<std::size_t>(y) * width + x) * 2]; }
  double v(int y, int x) const { return uv[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
  void set(int y, int x, double du, double dv) {
    uv[(static_cast<std::size_t>(y) * width + x) * 2] = du;
    uv[(static_cast<std::size_t>(y) * width + x) * 2 + 1] = dv;
  }
};

// Per-pixel affine transform stored as (h, w, 6) with channel order
// [a11, a12, a21, a22, u, v]: linear part A and displacement f. Anchored
// like FlowField; the local linear map acts on offsets around the pixel.
// Backed by a Tensor so residual updates stay differentiable.
struct AffineField {
  Tensor params;

  AffineField() = default;
  explicit AffineField(Tensor p);

  int height() const { return params.dim(0); }
  int width() const { return params.dim(1); }

  // a11,a12,a21,a22,u,v at one pixel.
  void fetch(int y, int x, double out[6]) const;
};

// Field with A = I and f = 0 at every pixel.
AffineField identity_field(int h, int w);

// Element-wise parameter sum; grids must match.
AffineField add_residual(const AffineField& base, const AffineField& residual);

// i + f_i + A_i * delta.
PixelCoord transform_offset(const AffineField& field, const PixelCoord& i, const Vec2& delta);

FlowField flow_of(const AffineField& field);

// Resamples a field to another grid. Translation components are scaled by
// the grid-size ratio; the linear part is interpolated unchanged.
AffineField upsample_field(const AffineField& field, int target_h, int target_w);

// Pulls `source` through the flow: output pixel i takes the bilinearly
// sampled source value at i + f_i (clamp-to-edge). The output is aligned
// with the grid the flow is anchored on.
Image warp_image(const Image& source, const FlowField& flow);

}  // namespace rtn

#endif  // RTN_GEOMETRY_HPP_
