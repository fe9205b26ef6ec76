#ifndef RTN_EVAL_HPP_
#define RTN_EVAL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "rtn/geometry.hpp"
#include "rtn/image.hpp"

namespace rtn {

struct EvalConfig {
  // A flow endpoint counts as correct when norm_dim / max(h, w) times its
  // error is strictly below threshold.
  double threshold = 5.0;
  double norm_dim = 100.0;
  std::vector<double> alphas = {0.05, 0.1, 0.15};  // PCK, boundary inclusive

  void validate() const;
};

struct EndpointStats {
  double accuracy = 0.0;    // fraction below threshold
  double mean_error = 0.0;  // normalized endpoint error
  int pixels = 0;
};

// Fraction of masked pixels whose scaled endpoint error is under the
// threshold. Empty mask raises DataError (the metric is undefined).
double endpoint_accuracy(const FlowField& flow, const FlowField& gt_flow,
                         const std::vector<std::uint8_t>& mask, const EvalConfig& cfg);

EndpointStats endpoint_stats(const FlowField& flow, const FlowField& gt_flow,
                             const std::vector<std::uint8_t>& mask, const EvalConfig& cfg);

// Fraction of id-matched points within alpha * ref_dim (inclusive).
// Throws DataError when the sets share no id.
double pck(const KeypointSet& pred_points, const KeypointSet& gt_points, double ref_dim,
           double alpha);

// Moves each point by the flow bilinearly interpolated at its location.
KeypointSet transport_keypoints(const KeypointSet& points, const FlowField& flow);

struct MetricRow {
  std::string pair_id;
  std::string metric;
  double value = 0.0;
};

// CSV with header pair_id,metric,value; values round-trip exactly.
void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metric_csv(const std::string& path);

}  // namespace rtn

#endif  // RTN_EVAL_HPP_
