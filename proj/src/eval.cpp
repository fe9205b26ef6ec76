#include "rtn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rtn/interp.hpp"

namespace rtn {

void EvalConfig::validate() const {
  if (threshold <= 0.0) throw ConfigError("eval: threshold must be positive");
  if (norm_dim <= 0.0) throw ConfigError("eval: normalization dimension must be positive");
  for (double a : alphas) {
    if (a <= 0.0 || a >= 1.0) throw ConfigError("eval: alphas must lie in (0, 1)");
  }
}

EndpointStats endpoint_stats(const FlowField& flow, const FlowField& gt_flow,
                             const std::vector<std::uint8_t>& mask, const EvalConfig& cfg) {
  cfg.validate();
  if (flow.height != gt_flow.height || flow.width != gt_flow.width) {
    throw DimensionError("endpoint_stats: flow grids differ");
  }
  if (static_cast<int>(mask.size()) != flow.height * flow.width) {
    throw DimensionError("endpoint_stats: mask size does not match grid");
  }
  const double sigma = cfg.norm_dim / std::max(flow.height, flow.width);
  EndpointStats stats;
  double err_sum = 0.0;
  int hit = 0;
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      if (!mask[static_cast<std::size_t>(y) * flow.width + x]) continue;
      const double du = flow.u(y, x) - gt_flow.u(y, x);
      const double dv = flow.v(y, x) - gt_flow.v(y, x);
      const double err = sigma * std::sqrt(du * du + dv * dv);
      err_sum += err;
      if (err < cfg.threshold) ++hit;
      ++stats.pixels;
    }
  }
  if (stats.pixels == 0) throw DataError("endpoint_stats: empty mask, metric undefined");
  stats.accuracy = static_cast<double>(hit) / stats.pixels;
  stats.mean_error = err_sum / stats.pixels;
  return stats;
}

double endpoint_accuracy(const FlowField& flow, const FlowField& gt_flow,
                         const std::vector<std::uint8_t>& mask, const EvalConfig& cfg) {
  return endpoint_stats(flow, gt_flow, mask, cfg).accuracy;
}

double pck(const KeypointSet& pred_points, const KeypointSet& gt_points, double ref_dim,
           double alpha) {
  if (ref_dim <= 0.0) throw ConfigError("pck: reference dimension must be positive");
  int matched = 0, hit = 0;
  for (const Keypoint& p : pred_points.points) {
    const Keypoint* g = gt_points.find(p.id);
    if (!g) continue;
    ++matched;
    const double dx = p.x - g->x, dy = p.y - g->y;
    if (std::sqrt(dx * dx + dy * dy) <= alpha * ref_dim) ++hit;
  }
  if (matched == 0) throw DataError("pck: no shared keypoint ids");
  return static_cast<double>(hit) / matched;
}

KeypointSet transport_keypoints(const KeypointSet& points, const FlowField& flow) {
  KeypointSet out;
  for (const Keypoint& p : points.points) {
    const Taps t = make_taps(p.x, p.y, flow.height, flow.width, 2);
    Keypoint moved;
    moved.id = p.id;
    moved.x = p.x + tap_value(flow.uv.data(), t, 0);
    moved.y = p.y + tap_value(flow.uv.data(), t, 1);
    out.points.push_back(moved);
  }
  return out;
}

void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  out << "pair_id,metric,value\n";
  char buf[64];
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << r.pair_id << "," << r.metric << "," << buf << "\n";
  }
}

std::vector<MetricRow> read_metric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line) || line != "pair_id,metric,value") {
    throw ParseError(path + ": missing csv header");
  }
  std::vector<MetricRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    MetricRow row;
    std::string value;
    if (!std::getline(is, row.pair_id, ',') || !std::getline(is, row.metric, ',') ||
        !std::getline(is, value)) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected pair_id,metric,value");
    }
    try {
      row.value = std::stod(value);
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + value + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace rtn
