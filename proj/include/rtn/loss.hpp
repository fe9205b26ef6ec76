#ifndef RTN_LOSS_HPP_
#define RTN_LOSS_HPP_

#include <utility>
#include <vector>

#include "rtn/features.hpp"
#include "rtn/matching.hpp"
#include "rtn/rng.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

// Candidate-classification training signal. For each chosen pixel, the
// window of transformed target descriptors around it forms one candidate
// set; the center is the lone positive and the loss is the mean negative
// log softmax probability of that center. Candidates always use dilation
// stride 1 whatever the correlation schedule; pixels whose window would
// leave the grid are never sampled.
struct LossConfig {
  int window_radius = 2;  // matches the correlation window by default
  int pixels_per_pair = 256;
  bool per_iteration = false;       // supervise every iteration, not just the last
  bool window_normalized = false;   // feed window-renormalized similarities to the softmax

  void validate() const;
};

// Raw cosine similarities (m, count) between the source descriptor at each
// pixel and the transformed target descriptors over its stride-1 window.
// Pixels must be interior: radius <= x < w - radius, same for y.
Tensor window_similarities(const FeatureMap& source, const FeatureMap& target_transformed,
                           const std::vector<std::pair<int, int>>& pixels_yx, int radius);

// Per-row division by max(L2 norm, eps), the same guarded normalization
// the correlation volume applies per window.
Tensor rows_unit_norm(const Tensor& rows, double eps = 1e-12);

// Mean over rows of log-sum-exp(row) - row[center]; numerically stable
// softmax cross entropy against the fixed center class.
Tensor cross_entropy_center(const Tensor& sims, int center_index);

// Softmax probability vector over the window candidates of one pixel.
Tensor match_probability(const FeatureMap& source, const FeatureMap& target_transformed,
                         int pixel_y, int pixel_x, const WindowSpec& window,
                         bool window_normalized = false);

// Mean center-classification loss over the sampled pixels.
Tensor classification_loss(const FeatureMap& source, const FeatureMap& target_transformed,
                           const std::vector<std::pair<int, int>>& pixels_yx,
                           const LossConfig& cfg);

// Uniform interior pixel sample (with replacement). Throws UsageError when
// the grid has no interior pixel for the window or count < 1.
std::vector<std::pair<int, int>> sample_loss_pixels(int h, int w, int radius, int count, Rng& rng);

}  // namespace rtn

#endif  // RTN_LOSS_HPP_
