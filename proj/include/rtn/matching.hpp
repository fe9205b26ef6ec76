#ifndef RTN_MATCHING_HPP_
#define RTN_MATCHING_HPP_

#include <string>
#include <utility>
#include <vector>

#include "rtn/features.hpp"
#include "rtn/geometry.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

// Square search window: offsets stride * {-radius..radius}^2, row-major.
// The center offset is always included.
struct WindowSpec {
  int radius = 2;
  int stride = 1;

  int side() const { return 2 * radius + 1; }
  int count() const { return side() * side(); }
};

// Window-normalized similarity volume (h, w, count). Per pixel, raw
// similarities between the source descriptor and the transformed target
// descriptors over the window are divided by the root of their sum of
// squares, guarded below by eps; the squared entries then sum to one
// whenever any raw similarity is nonzero. Window positions outside the
// grid read the clamped edge descriptor.
Tensor correlation(const FeatureMap& source, const FeatureMap& target_transformed,
                   const WindowSpec& window, double eps = 1e-12);

// Encoder-decoder residual estimator. Input channels track the window
// count; two stride-2 encoder convs (-> 64 -> 128), mirrored decoder with
// skip concatenations (-> 64 -> 32), final 3x3 conv to 6 channels whose
// kernel and bias start at zero so the initial residual vanishes.
struct MatcherParams {
  Tensor ke1, be1, ke2, be2, kd1, bd1, kd2, bd2, kout, bout;

  int input_channels() const { return ke1.dim(2); }
  std::vector<Tensor> parameters() const {
    return {ke1, be1, ke2, be2, kd1, bd1, kd2, bd2, kout, bout};
  }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

MatcherParams make_matcher(Rng& rng, int input_channels);

// Residual field (h, w, 6) from a correlation volume; fully convolutional,
// any spatial size is accepted.
AffineField estimate_residual(const Tensor& volume, const MatcherParams& params);

struct RecurrenceConfig {
  int k_max = 4;
  int window_radius = 2;
  std::vector<int> dilation_schedule = {4, 2, 1, 1};  // non-increasing, one per iteration
  double correlation_eps = 1e-12;

  void validate() const;
  // Schedule entry for iteration k (0-based); repeats the last entry when
  // evaluating past the configured depth.
  int dilation_at(int k) const;
};

struct RecurrenceResult {
  AffineField final_field;
  std::vector<AffineField> trajectory;  // T^0 (identity) .. T^k_max
  std::vector<Tensor> volumes;          // correlation volume per iteration
  FeatureMap source_features;
  Tensor target_trunk;                  // reusable for loss-side extraction
};

// Iterative refinement: starting from the identity field, each iteration
// re-extracts field-aligned target features, correlates them against the
// source features with the scheduled dilation, and adds the estimated
// residual. Differentiable end to end.
RecurrenceResult run_recurrence(const Tensor& source_img, const Tensor& target_img,
                                const FeatureNetParams& feat, const MatcherParams& match,
                                const RecurrenceConfig& cfg);

}  // namespace rtn

#endif  // RTN_MATCHING_HPP_
