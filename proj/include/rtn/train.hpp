#ifndef RTN_TRAIN_HPP_
#define RTN_TRAIN_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rtn/data.hpp"
#include "rtn/eval.hpp"
#include "rtn/loss.hpp"
#include "rtn/matching.hpp"

namespace rtn {

struct TrainConfig {
  int steps = 1200;
  int batch_size = 4;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  int checkpoint_interval = 400;
  int descriptor_dim = 32;
  RecurrenceConfig recurrence;
  LossConfig loss;
  SyntheticConfig data;          // training pairs
  SyntheticConfig heldout;       // evaluation pairs (defaults to 96 px)
  EvalConfig eval;
  int eval_pairs = 32;

  TrainConfig() { heldout.size = 96; }
  void validate() const;
};

struct Model {
  FeatureNetParams feat;
  MatcherParams match;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// Fresh model: randomized descriptor net and matcher trunk, zeroed final
// residual layer (the first pass leaves the field at identity).
Model make_model(const TrainConfig& cfg);

// Momentum SGD with global-norm gradient clipping.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, double learning_rate, double momentum, double clip_norm);

  // Applies one update from the accumulated gradients; returns the
  // pre-clip global gradient norm.
  double step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_, momentum_, clip_;
};

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t step,
                     const std::string& config_text);

struct LoadedCheckpoint {
  Model model;
  std::uint64_t step = 0;
  std::string config_text;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Deterministic per-purpose seed streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;
};

// Weakly supervised loop: per step, a fresh batch of synthetic pairs runs
// through the recurrence, the center-classification loss is averaged over
// the batch, and both networks update jointly. Non-finite losses abort
// with a NumericError naming the step and pair seeds. on_step, when set,
// is called after every update with (step, loss).
TrainResult train(const TrainConfig& cfg, const std::string& out_dir = "",
                  const std::string& config_text = "",
                  const std::function<void(int, double)>& on_step = nullptr);

struct PairMetrics {
  std::uint64_t seed = 0;
  double accuracy = 0.0;             // final iteration
  double baseline_accuracy = 0.0;    // zero-flow accuracy from the ground truth
  std::vector<double> accuracy_at;   // per iteration 0..k_max
  std::vector<double> mean_error_at; // normalized endpoint error per iteration
  std::vector<double> pck_at_alpha;  // one per cfg.eval alpha
};

struct EvalSummary {
  std::vector<PairMetrics> pairs;
  double mean_accuracy = 0.0;
  double mean_baseline = 0.0;
  std::vector<double> mean_accuracy_at;
  std::vector<double> mean_error_at;
  std::vector<double> mean_pck;
};

// Runs the model over `count` held-out pairs (seeds derived from seed).
// Pairs are independent, so threads > 1 fans them out across workers; the
// result is bit-identical for any thread count.
EvalSummary evaluate_synthetic(const Model& model, const RecurrenceConfig& rec_cfg,
                               const EvalConfig& eval_cfg, const SyntheticConfig& data_cfg,
                               int count, std::uint64_t seed, int threads = 1);

// Same protocol over explicit pairs (e.g. loaded from disk).
EvalSummary evaluate_pairs(const Model& model, const RecurrenceConfig& rec_cfg,
                           const EvalConfig& eval_cfg, const std::vector<SyntheticPair>& pairs,
                           int threads = 1);

std::vector<MetricRow> summary_to_rows(const EvalSummary& summary, const EvalConfig& eval_cfg);

}  // namespace rtn

#endif  // RTN_TRAIN_HPP_
