#ifndef RTN_IMAGE_HPP_
#define RTN_IMAGE_HPP_

#include <string>
#include <vector>

#include "rtn/errors.hpp"

namespace rtn {

// RGB raster, values in [0, 1], row-major (y, x, channel).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // height * width * 3

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  void set(int y, int x, int c, double v) {
    pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  std::size_t size() const { return pixels.size(); }
};

struct Keypoint {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
};

// Keypoints with unique ids; pairs of sets are matched by id.
struct KeypointSet {
  std::vector<Keypoint> points;

  const Keypoint* find(int id) const {
    for (const auto& p : points) {
      if (p.id == id) return &p;
    }
    return nullptr;
  }
};

// Binary PPM (P6, maxval 255). Round trips byte-exactly.
Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);

// Line-oriented "id x y" text, LF-terminated. Duplicate ids are rejected.
KeypointSet load_keypoints(const std::string& path);
void save_keypoints(const KeypointSet& kps, const std::string& path);

}  // namespace rtn

#endif  // RTN_IMAGE_HPP_
