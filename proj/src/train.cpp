#include "rtn/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "rtn/serialize.hpp"

namespace rtn {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
  if (clip_norm <= 0.0) throw ConfigError("train: clip norm must be positive");
  if (checkpoint_interval < 1) throw ConfigError("train: checkpoint interval must be >= 1");
  if (descriptor_dim < 2) throw ConfigError("train: descriptor dim must be >= 2");
  if (eval_pairs < 1) throw ConfigError("train: eval pair count must be >= 1");
  recurrence.validate();
  loss.validate();
  data.validate();
  heldout.validate();
  eval.validate();
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out = feat.parameters();
  for (Tensor& t : match.parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  auto out = feat.named_parameters();
  for (auto& nt : match.named_parameters()) out.push_back(nt);
  return out;
}

Model make_model(const TrainConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0x111, 0));
  Model model;
  model.feat = make_feature_net(rng, cfg.descriptor_dim);
  WindowSpec window{cfg.recurrence.window_radius, 1};
  model.match = make_matcher(rng, window.count());
  return model;
}

Optimizer::Optimizer(std::vector<Tensor> params, double learning_rate, double momentum,
                     double clip_norm)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum), clip_(clip_norm) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

double Optimizer::step() {
  double sq = 0.0;
  for (const Tensor& p : params_) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    throw NumericError("optimizer: non-finite gradient norm");
  }
  const double scale = norm > clip_ ? clip_ / norm : 1.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& vel = velocity_[i];
    const auto& grad = params_[i].grad();
    auto& vals = params_[i].mutable_values();
    for (std::size_t j = 0; j < vel.size(); ++j) {
      vel[j] = momentum_ * vel[j] + grad[j] * scale;
      vals[j] -= lr_ * vel[j];
    }
  }
  return norm;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  Rng rng(seed ^ (tag * 0x9E3779B97F4A7C15ull) ^ (index * 0xC2B2AE3D27D4EB4Full));
  return rng.next_u64();
}

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t step,
                     const std::string& config_text) {
  TensorFile file;
  file.step = step;
  file.meta = config_text;
  for (const auto& [name, tensor] : model.named_parameters()) {
    file.tensors.emplace_back(name, tensor);
  }
  write_tensor_file(path, file);
}

namespace {

Tensor take_param(const TensorFile& file, const std::string& name) {
  const Tensor* t = file.find(name);
  if (!t) throw DataError("checkpoint: missing tensor '" + name + "'");
  return Tensor::from_values(t->shape(), t->values(), true);
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::string& path) {
  TensorFile file = read_tensor_file(path);
  LoadedCheckpoint out;
  out.step = file.step;
  out.config_text = file.meta;
  FeatureNetParams& f = out.model.feat;
  f.k1 = take_param(file, "feat.conv1.kernel");
  f.b1 = take_param(file, "feat.conv1.bias");
  f.k2 = take_param(file, "feat.conv2.kernel");
  f.b2 = take_param(file, "feat.conv2.bias");
  f.k3 = take_param(file, "feat.conv3.kernel");
  f.b3 = take_param(file, "feat.conv3.bias");
  f.k4 = take_param(file, "feat.conv4.kernel");
  f.b4 = take_param(file, "feat.conv4.bias");
  MatcherParams& m = out.model.match;
  m.ke1 = take_param(file, "match.enc1.kernel");
  m.be1 = take_param(file, "match.enc1.bias");
  m.ke2 = take_param(file, "match.enc2.kernel");
  m.be2 = take_param(file, "match.enc2.bias");
  m.kd1 = take_param(file, "match.dec1.kernel");
  m.bd1 = take_param(file, "match.dec1.bias");
  m.kd2 = take_param(file, "match.dec2.kernel");
  m.bd2 = take_param(file, "match.dec2.bias");
  m.kout = take_param(file, "match.out.kernel");
  m.bout = take_param(file, "match.out.bias");
  return out;
}

namespace {

Tensor pair_loss(const Model& model, const SyntheticPair& pair, const TrainConfig& cfg,
                 Rng& pixel_rng) {
  const Tensor src = image_to_tensor(pair.source);
  const Tensor tgt = image_to_tensor(pair.target);
  RecurrenceResult rec = run_recurrence(src, tgt, model.feat, model.match, cfg.recurrence);
  const int hf = rec.target_trunk.dim(0);
  const int wf = rec.target_trunk.dim(1);
  const auto pixels = sample_loss_pixels(hf, wf, cfg.loss.window_radius,
                                         cfg.loss.pixels_per_pair, pixel_rng);
  if (!cfg.loss.per_iteration) {
    FeatureMap dt = extract_transformed_from_trunk(rec.target_trunk, rec.final_field, model.feat);
    return classification_loss(rec.source_features, dt, pixels, cfg.loss);
  }
  Tensor total;
  int terms = 0;
  for (std::size_t k = 1; k < rec.trajectory.size(); ++k) {
    FeatureMap dt = extract_transformed_from_trunk(rec.target_trunk, rec.trajectory[k], model.feat);
    Tensor l = classification_loss(rec.source_features, dt, pixels, cfg.loss);
    total = terms == 0 ? l : add(total, l);
    ++terms;
  }
  return scale(total, 1.0 / terms);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& config_text, const std::function<void(int, double)>& on_step) {
  cfg.validate();
  TrainResult result;
  result.model = make_model(cfg);
  std::vector<Tensor> params = result.model.parameters();
  Optimizer opt(params, cfg.learning_rate, cfg.momentum, cfg.clip_norm);

  std::ofstream curve;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError(out_dir + ": cannot create output directory");
    curve.open(out_dir + "/loss.csv");
    if (!curve) throw DataError(out_dir + ": cannot write loss curve");
    curve << "step,loss\n";
  }

  char buf[64];
  double last_gnorm = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor batch_loss;
    std::vector<std::uint64_t> batch_seeds;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::uint64_t pair_seed = mix_seed(cfg.seed, 0xDA7A, static_cast<std::uint64_t>(step) *
                                                                      cfg.batch_size + b);
      batch_seeds.push_back(pair_seed);
      SyntheticPair pair = gen_pair(pair_seed, cfg.data);
      Rng pixel_rng(mix_seed(cfg.seed, 0x9188, static_cast<std::uint64_t>(step) * cfg.batch_size + b));
      Tensor l = pair_loss(result.model, pair, cfg, pixel_rng);
      batch_loss = b == 0 ? l : add(batch_loss, l);
    }
    Tensor loss = scale(batch_loss, 1.0 / cfg.batch_size);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      std::string seeds;
      for (std::uint64_t s : batch_seeds) seeds += std::to_string(s) + " ";
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         ", pair seeds " + seeds + ", last gradient norm " +
                         std::to_string(last_gnorm));
    }
    zero_grad(params);
    backward(loss);
    double gnorm = 0.0;
    try {
      gnorm = opt.step();
    } catch (const NumericError&) {
      std::string seeds;
      for (std::uint64_t s : batch_seeds) seeds += std::to_string(s) + " ";
      throw NumericError("train: non-finite gradient norm at step " + std::to_string(step) +
                         ", pair seeds " + seeds + ", last finite norm " +
                         std::to_string(last_gnorm));
    }
    last_gnorm = gnorm;
    result.loss_curve.push_back(loss_value);
    if (curve.is_open()) {
      std::snprintf(buf, sizeof(buf), "%.17g", loss_value);
      curve << step << "," << buf << "\n";
    }
    if (on_step) on_step(step, loss_value);
    if (!out_dir.empty() && (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
      std::snprintf(buf, sizeof(buf), "/ckpt_%06d.rtn", step + 1);
      save_checkpoint(out_dir + buf, result.model, static_cast<std::uint64_t>(step + 1), config_text);
    }
  }
  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/final.rtn", result.model, static_cast<std::uint64_t>(cfg.steps),
                    config_text);
  }
  return result;
}

namespace {

PairMetrics evaluate_one_pair(const Model& model, const RecurrenceConfig& rec_cfg,
                              const EvalConfig& eval_cfg, const SyntheticPair& pair) {
  NoGradGuard no_grad;
  const int k_points = rec_cfg.k_max + 1;
  PairMetrics pm;
  pm.seed = pair.seed;
  const Tensor src = image_to_tensor(pair.source);
  const Tensor tgt = image_to_tensor(pair.target);
  RecurrenceResult rec = run_recurrence(src, tgt, model.feat, model.match, rec_cfg);
  const int h = pair.source.height, w = pair.source.width;
  for (int k = 0; k < k_points; ++k) {
    AffineField up = upsample_field(rec.trajectory[static_cast<std::size_t>(k)], h, w);
    FlowField flow = flow_of(up);
    EndpointStats st = endpoint_stats(flow, pair.gt_flow, pair.fg_mask, eval_cfg);
    pm.accuracy_at.push_back(st.accuracy);
    pm.mean_error_at.push_back(st.mean_error);
  }
  pm.baseline_accuracy = pm.accuracy_at.front();  // identity start = zero flow
  pm.accuracy = pm.accuracy_at.back();

  AffineField up_final = upsample_field(rec.final_field, h, w);
  FlowField final_flow = flow_of(up_final);
  KeypointSet src_kps, tgt_kps;
  gen_keypoints(pair, 10, pair.seed, &src_kps, &tgt_kps);
  KeypointSet pred = transport_keypoints(src_kps, final_flow);
  const double ref_dim = std::max(h, w);
  for (double alpha : eval_cfg.alphas) {
    pm.pck_at_alpha.push_back(pck(pred, tgt_kps, ref_dim, alpha));
  }
  return pm;
}

}  // namespace

EvalSummary evaluate_pairs(const Model& model, const RecurrenceConfig& rec_cfg,
                           const EvalConfig& eval_cfg, const std::vector<SyntheticPair>& pairs,
                           int threads) {
  eval_cfg.validate();
  rec_cfg.validate();
  if (pairs.empty()) throw DataError("evaluate: empty pair set");
  EvalSummary summary;
  const int k_points = rec_cfg.k_max + 1;
  summary.mean_accuracy_at.assign(static_cast<std::size_t>(k_points), 0.0);
  summary.mean_error_at.assign(static_cast<std::size_t>(k_points), 0.0);
  summary.mean_pck.assign(eval_cfg.alphas.size(), 0.0);

  summary.pairs.resize(pairs.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(pairs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      summary.pairs[i] = evaluate_one_pair(model, rec_cfg, eval_cfg, pairs[i]);
    }
  } else {
    // Each pair lands in its own slot; the outcome is independent of the
    // thread count and schedule.
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= pairs.size()) return;
          summary.pairs[i] = evaluate_one_pair(model, rec_cfg, eval_cfg, pairs[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  // Sum first, divide once: a reader aggregating the per-pair rows the
  // obvious way reproduces these means bit for bit.
  const double n = static_cast<double>(summary.pairs.size());
  for (const PairMetrics& pm : summary.pairs) {
    summary.mean_accuracy += pm.accuracy;
    summary.mean_baseline += pm.baseline_accuracy;
    for (int k = 0; k < k_points; ++k) {
      summary.mean_accuracy_at[static_cast<std::size_t>(k)] += pm.accuracy_at[static_cast<std::size_t>(k)];
      summary.mean_error_at[static_cast<std::size_t>(k)] += pm.mean_error_at[static_cast<std::size_t>(k)];
    }
    for (std::size_t a = 0; a < summary.mean_pck.size(); ++a) {
      summary.mean_pck[a] += pm.pck_at_alpha[a];
    }
  }
  summary.mean_accuracy /= n;
  summary.mean_baseline /= n;
  for (double& v : summary.mean_accuracy_at) v /= n;
  for (double& v : summary.mean_error_at) v /= n;
  for (double& v : summary.mean_pck) v /= n;
  return summary;
}

EvalSummary evaluate_synthetic(const Model& model, const RecurrenceConfig& rec_cfg,
                               const EvalConfig& eval_cfg, const SyntheticConfig& data_cfg,
                               int count, std::uint64_t seed, int threads) {
  std::vector<SyntheticPair> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    pairs.push_back(gen_pair(mix_seed(seed, 0xEA11, static_cast<std::uint64_t>(i)), data_cfg));
  }
  return evaluate_pairs(model, rec_cfg, eval_cfg, pairs, threads);
}

std::vector<MetricRow> summary_to_rows(const EvalSummary& summary, const EvalConfig& eval_cfg) {
  std::vector<MetricRow> rows;
  char alpha_buf[48];
  for (const PairMetrics& pm : summary.pairs) {
    const std::string id = "pair_" + std::to_string(pm.seed);
    rows.push_back({id, "endpoint_accuracy", pm.accuracy});
    rows.push_back({id, "baseline_accuracy", pm.baseline_accuracy});
    for (std::size_t k = 0; k < pm.accuracy_at.size(); ++k) {
      rows.push_back({id, "accuracy_iter" + std::to_string(k), pm.accuracy_at[k]});
      rows.push_back({id, "mean_error_iter" + std::to_string(k), pm.mean_error_at[k]});
    }
    for (std::size_t a = 0; a < pm.pck_at_alpha.size(); ++a) {
      std::snprintf(alpha_buf, sizeof(alpha_buf), "pck_alpha_%g", eval_cfg.alphas[a]);
      rows.push_back({id, alpha_buf, pm.pck_at_alpha[a]});
    }
  }
  return rows;
}

}  // namespace rtn
