#ifndef RTN_INTERP_HPP_
#define RTN_INTERP_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace rtn {

// One clamped bilinear read, shared by every sampler in the project so
// that image warping, tensor sampling, and gathered convolution agree bit
// for bit. Exact integer coordinates reproduce grid values exactly: the
// degenerate edge cell collapses to a single column/row with zero weight
// instead of interpolating with weight one.
struct Taps {
  std::size_t i00, i01, i10, i11;
  double wx, wy;
  bool x_in, y_in;  // strict interior; location gradients vanish outside
};

inline Taps make_taps(double x, double y, int h, int w, int channels) {
  Taps t;
  t.x_in = x > 0.0 && x < static_cast<double>(w - 1);
  t.y_in = y > 0.0 && y < static_cast<double>(h - 1);
  const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
  int x0 = static_cast<int>(std::floor(xc));
  int y0 = static_cast<int>(std::floor(yc));
  int x1;
  if (x0 >= w - 1) {
    x0 = w - 1;
    x1 = w - 1;
    t.wx = 0.0;
  } else {
    x1 = x0 + 1;
    t.wx = xc - x0;
  }
  int y1;
  if (y0 >= h - 1) {
    y0 = h - 1;
    y1 = h - 1;
    t.wy = 0.0;
  } else {
    y1 = y0 + 1;
    t.wy = yc - y0;
  }
  t.i00 = (static_cast<std::size_t>(y0) * w + x0) * channels;
  t.i01 = (static_cast<std::size_t>(y0) * w + x1) * channels;
  t.i10 = (static_cast<std::size_t>(y1) * w + x0) * channels;
  t.i11 = (static_cast<std::size_t>(y1) * w + x1) * channels;
  return t;
}

inline double tap_value(const double* data, const Taps& t, int c) {
  const double v00 = data[t.i00 + static_cast<std::size_t>(c)];
  const double v01 = data[t.i01 + static_cast<std::size_t>(c)];
  const double v10 = data[t.i10 + static_cast<std::size_t>(c)];
  const double v11 = data[t.i11 + static_cast<std::size_t>(c)];
  const double top = v00 + t.wx * (v01 - v00);
  const double bot = v10 + t.wx * (v11 - v10);
  return top + t.wy * (bot - top);
}

// d(sample)/dx and d(sample)/dy for one channel.
inline double tap_dx(const double* data, const Taps& t, int c) {
  const double v00 = data[t.i00 + static_cast<std::size_t>(c)];
  const double v01 = data[t.i01 + static_cast<std::size_t>(c)];
  const double v10 = data[t.i10 + static_cast<std::size_t>(c)];
  const double v11 = data[t.i11 + static_cast<std::size_t>(c)];
  return (v01 - v00) * (1.0 - t.wy) + (v11 - v10) * t.wy;
}

inline double tap_dy(const double* data, const Taps& t, int c) {
  const double v00 = data[t.i00 + static_cast<std::size_t>(c)];
  const double v01 = data[t.i01 + static_cast<std::size_t>(c)];
  const double v10 = data[t.i10 + static_cast<std::size_t>(c)];
  const double v11 = data[t.i11 + static_cast<std::size_t>(c)];
  return (v10 - v00) * (1.0 - t.wx) + (v11 - v01) * t.wx;
}

}  // namespace rtn

#endif  // RTN_INTERP_HPP_
