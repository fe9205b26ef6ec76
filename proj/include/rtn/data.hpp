#ifndef RTN_DATA_HPP_
#define RTN_DATA_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "rtn/geometry.hpp"
#include "rtn/image.hpp"
#include "rtn/rng.hpp"

namespace rtn {

struct SyntheticConfig {
  int size = 64;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double rot_max_deg = 15.0;
  double trans_max = 8.0;
  double local_warp_amp = 2.0;
  // Minimum wavelength of the local warp, as a fraction of the canvas.
  double local_warp_smoothness = 0.45;
  std::string texture = "auto";  // auto | waves | blobs | checker

  void validate() const;
};

// Image pair with exact ground truth. The clean procedural render is the
// target; the source is the target pulled through the sampled deformation,
// so source(x) equals target(x + gt_flow(x)) by construction. Fields and
// mask are anchored on the source grid at image resolution; the mask marks
// source pixels whose correspondence lands on the object.
struct SyntheticPair {
  Image source;
  Image target;
  AffineField gt_field;  // (h, w, 6): local Jacobian and displacement
  FlowField gt_flow;
  std::vector<std::uint8_t> fg_mask;  // h * w, source grid
  std::uint64_t seed = 0;

  int mask_count() const;
  bool masked(int y, int x) const { return fg_mask[static_cast<std::size_t>(y) * source.width + x] != 0; }
};

SyntheticPair gen_pair(std::uint64_t seed, const SyntheticConfig& cfg);

// Matched keypoints on the pair: ids line up, source points sit on masked
// pixels, target points are their exact correspondences.
void gen_keypoints(const SyntheticPair& pair, int count, std::uint64_t seed,
                   KeypointSet* source_kps, KeypointSet* target_kps);

// Directory layout: source.ppm, target.ppm, gt.rtnt (gt_field + fg_mask).
void save_pair(const SyntheticPair& pair, const std::string& dir);
SyntheticPair load_pair(const std::string& dir);

}  // namespace rtn

#endif  // RTN_DATA_HPP_
