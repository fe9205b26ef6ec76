#ifndef RTN_FEATURES_HPP_
#define RTN_FEATURES_HPP_

#include <string>
#include <utility>
#include <vector>

#include "rtn/geometry.hpp"
#include "rtn/image.hpp"
#include "rtn/rng.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

// Grid of per-pixel descriptors, unit L2 norm (zero vectors stay zero
// under the epsilon rule).
struct FeatureMap {
  Tensor data;  // (h, w, d)

  FeatureMap() = default;
  explicit FeatureMap(Tensor t) : data(std::move(t)) {}
  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }
  int dim() const { return data.dim(2); }
};

// Convolutional descriptor network, shared between both images of a pair.
// Layout: 3x3 conv 3->16 s1 + relu, 3x3 16->32 s2 + relu, 3x3 32->32 s2 +
// relu (the trunk), then a final 3x3 32->d s1 with edge replication and L2
// normalization. Total stride 4.
struct FeatureNetParams {
  Tensor k1, b1, k2, b2, k3, b3, k4, b4;

  int descriptor_dim() const { return k4.dim(3); }
  std::vector<Tensor> parameters() const { return {k1, b1, k2, b2, k3, b3, k4, b4}; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

inline constexpr int kFeatureStride = 4;

// Kernels: uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)] (fan_in = k*k*c_in);
// biases zero.
FeatureNetParams make_feature_net(Rng& rng, int descriptor_dim = 32);

// Grid size after the stride-4 trunk for an input extent n.
int feature_grid_extent(int n);

Tensor image_to_tensor(const Image& img);

// Trunk activations before the final convolution.
Tensor extract_trunk(const Tensor& image, const FeatureNetParams& params);

FeatureMap extract(const Image& image, const FeatureNetParams& params);
FeatureMap extract(const Tensor& image, const FeatureNetParams& params);

// Field-aligned extraction: the whole image runs through the trunk once;
// per pixel, trunk activations are gathered at i + f_i + A_i * delta for
// the final layer's 3x3 offsets via bilinear sampling, combined by the
// final convolution weights, and normalized. Differentiable in the field.
// With an identity field this reproduces extract() bit for bit.
FeatureMap extract_transformed(const Image& image, const AffineField& field,
                               const FeatureNetParams& params);

// Same, reusing precomputed trunk activations across recurrence steps.
FeatureMap extract_transformed_from_trunk(const Tensor& trunk, const AffineField& field,
                                          const FeatureNetParams& params);

}  // namespace rtn

#endif  // RTN_FEATURES_HPP_
