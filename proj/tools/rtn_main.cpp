// Command-line front end: train, eval, warp, gen, gradcheck, ablate.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rtn/config.hpp"
#include "rtn/serialize.hpp"
#include "rtn/train.hpp"

namespace {

using namespace rtn;

std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_flow_visualization(const FlowField& flow, const std::string& path) {
  double max_mag = 1e-9;
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      max_mag = std::max(max_mag, std::hypot(flow.u(y, x), flow.v(y, x)));
    }
  }
  Image img(flow.height, flow.width);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      img.set(y, x, 0, 0.5 + 0.5 * flow.u(y, x) / max_mag);
      img.set(y, x, 1, 0.5 + 0.5 * flow.v(y, x) / max_mag);
      img.set(y, x, 2, std::hypot(flow.u(y, x), flow.v(y, x)) / max_mag);
    }
  }
  save_ppm(img, path);
}

void print_summary(const EvalSummary& summary, const EvalConfig& eval_cfg) {
  std::cout << "pairs " << summary.pairs.size() << "\n";
  std::cout << "endpoint_accuracy " << fmt17(summary.mean_accuracy) << "\n";
  std::cout << "baseline_accuracy " << fmt17(summary.mean_baseline) << "\n";
  for (std::size_t k = 0; k < summary.mean_accuracy_at.size(); ++k) {
    std::cout << "accuracy_iter" << k << " " << fmt17(summary.mean_accuracy_at[k]) << "\n";
  }
  for (std::size_t k = 0; k < summary.mean_error_at.size(); ++k) {
    std::cout << "mean_error_iter" << k << " " << fmt17(summary.mean_error_at[k]) << "\n";
  }
  for (std::size_t a = 0; a < summary.mean_pck.size(); ++a) {
    std::cout << "pck_alpha_" << eval_cfg.alphas[a] << " " << fmt17(summary.mean_pck[a]) << "\n";
  }
}

TrainConfig config_for_checkpoint(const LoadedCheckpoint& ckpt, const std::string& config_path) {
  if (!config_path.empty()) return load_config_file(config_path);
  if (!ckpt.config_text.empty()) return parse_config_text(ckpt.config_text);
  return TrainConfig{};
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config_file(config_path);
  cfg.validate();
  const std::string config_text = serialize_config(cfg);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream snapshot(out_dir + "/config.txt");
    snapshot << config_text;
  }
  train(cfg, out_dir, config_text, [](int step, double loss) {
    if (step % 25 == 0) {
      std::cout << "step " << step << " loss " << fmt17(loss) << std::endl;
    }
  });
  std::cout << "trained " << cfg.steps << " steps, checkpoint " << out_dir << "/final.rtn"
            << std::endl;
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& set_dir, int synthetic,
             const std::string& report, const std::string& config_path, std::uint64_t seed,
             int threads) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_for_checkpoint(ckpt, config_path);
  EvalSummary summary;
  if (!set_dir.empty()) {
    std::vector<SyntheticPair> pairs;
    std::vector<std::string> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(set_dir)) {
      if (entry.is_directory()) dirs.push_back(entry.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) pairs.push_back(load_pair(dir));
    if (pairs.empty()) throw DataError(set_dir + ": no pair directories found");
    summary = evaluate_pairs(ckpt.model, cfg.recurrence, cfg.eval, pairs, threads);
  } else {
    if (synthetic < 1) throw UsageError("eval: need --set DIR or --synthetic N");
    summary = evaluate_synthetic(ckpt.model, cfg.recurrence, cfg.eval, cfg.heldout, synthetic,
                                 seed, threads);
  }
  if (!report.empty()) {
    write_metric_csv(report, summary_to_rows(summary, cfg.eval));
  }
  print_summary(summary, cfg.eval);
  return 0;
}

int cmd_warp(const std::string& ckpt_path, const std::string& source_path,
             const std::string& target_path, const std::string& out_dir,
             const std::string& config_path) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_for_checkpoint(ckpt, config_path);
  Image source = load_ppm(source_path);
  Image target = load_ppm(target_path);
  if (source.height != target.height || source.width != target.width) {
    throw DataError("warp: images must share dimensions");
  }
  std::filesystem::create_directories(out_dir);
  NoGradGuard no_grad;
  // Field anchored on the target grid, pulling source content onto it:
  // the warped source progressively aligns with the target.
  RecurrenceResult rec = run_recurrence(image_to_tensor(target), image_to_tensor(source),
                                        ckpt.model.feat, ckpt.model.match, cfg.recurrence);
  for (std::size_t k = 0; k < rec.trajectory.size(); ++k) {
    AffineField up = upsample_field(rec.trajectory[k], source.height, source.width);
    FlowField flow = flow_of(up);
    Image warped = warp_image(source, flow);
    char name[48];
    std::snprintf(name, sizeof(name), "/warped_iter%zu.ppm", k);
    save_ppm(warped, out_dir + name);
    if (k + 1 == rec.trajectory.size()) {
      save_ppm(warped, out_dir + "/warped.ppm");
      write_flow_visualization(flow, out_dir + "/flow.ppm");
      TensorFile tf;
      tf.meta = "estimated-field";
      tf.tensors.emplace_back("field", up.params);
      write_tensor_file(out_dir + "/field.rtnt", tf);
    }
  }
  std::cout << "wrote " << rec.trajectory.size() << " panels to " << out_dir << std::endl;
  return 0;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir, int count,
            std::uint64_t seed) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config_file(config_path);
  cfg.data.validate();
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    SyntheticPair pair = gen_pair(mix_seed(seed, 0x6E4, static_cast<std::uint64_t>(i)), cfg.data);
    char name[32];
    std::snprintf(name, sizeof(name), "/pair_%04d", i);
    save_pair(pair, out_dir + name);
  }
  std::cout << "wrote " << count << " pairs to " << out_dir << std::endl;
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  auto report = [&worst](const char* name, double err) {
    std::cout << name << " " << fmt17(err) << "\n";
    worst = std::max(worst, err);
  };

  {
    std::vector<double> vals(5 * 4 * 2);
    for (auto& v : vals) v = rng.uniform(-1.0, 1.0);
    Tensor input = Tensor::from_values({5, 4, 2}, std::move(vals), true);
    std::vector<double> kv(3 * 3 * 2 * 3);
    for (auto& v : kv) v = rng.uniform(-1.0, 1.0);
    Tensor kernel = Tensor::from_values({3, 3, 2, 3}, std::move(kv), true);
    Tensor bias = Tensor::from_values({3}, {0.1, -0.2, 0.3}, true);
    report("conv2d", grad_check(
                         [](const std::vector<Tensor>& in) {
                           return sum(conv2d(in[0], in[1], in[2], 2, 1, PadMode::kReplicate));
                         },
                         {input, kernel, bias}));
  }
  {
    std::vector<double> vals(3 * 6);
    for (auto& v : vals) v = rng.uniform(-2.0, 2.0);
    Tensor x = Tensor::from_values({3, 6}, std::move(vals), true);
    report("softmax", grad_check(
                          [](const std::vector<Tensor>& in) {
                            return mean(mul(softmax(in[0], 1), in[0]));
                          },
                          {x}));
  }
  {
    std::vector<double> gv(6 * 6 * 2);
    for (auto& v : gv) v = rng.uniform(-1.0, 1.0);
    Tensor grid = Tensor::from_values({6, 6, 2}, std::move(gv), true);
    std::vector<double> lv;
    for (int i = 0; i < 6; ++i) {
      lv.push_back(rng.uniform(1.2, 4.4));
      lv.push_back(rng.uniform(1.2, 4.4));
    }
    Tensor locs = Tensor::from_values({6, 2}, std::move(lv), true);
    report("bilinear_sample", grad_check(
                                  [](const std::vector<Tensor>& in) {
                                    return sum(bilinear_sample(in[0], in[1]));
                                  },
                                  {grid, locs}));
  }
  {
    std::vector<double> av(4 * 3), bv(3 * 5);
    for (auto& v : av) v = rng.uniform(-1.0, 1.0);
    for (auto& v : bv) v = rng.uniform(-1.0, 1.0);
    Tensor a = Tensor::from_values({4, 3}, std::move(av), true);
    Tensor b = Tensor::from_values({3, 5}, std::move(bv), true);
    report("matmul", grad_check(
                         [](const std::vector<Tensor>& in) {
                           return sum(l2_normalize_last(matmul(in[0], in[1])));
                         },
                         {a, b}));
  }

  // Whole pipeline on a small pair: classification loss through the
  // recurrence, against a sampled subset of both networks' parameters.
  {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.data.size = 16;
    cfg.data.trans_max = 4.0;
    cfg.loss.window_radius = 1;
    cfg.loss.pixels_per_pair = 4;
    Model model = make_model(cfg);
    {
      Rng kr(seed ^ 0x5EED);
      for (auto& v : model.match.kout.mutable_values()) v = kr.uniform(-0.05, 0.05);
    }
    SyntheticPair pair = gen_pair(seed, cfg.data);
    std::vector<Tensor> params = model.parameters();
    const double err = grad_check_sampled(
        [&](const std::vector<Tensor>&) {
          RecurrenceResult rec = run_recurrence(image_to_tensor(pair.source),
                                                image_to_tensor(pair.target), model.feat,
                                                model.match, cfg.recurrence);
          FeatureMap dt =
              extract_transformed_from_trunk(rec.target_trunk, rec.final_field, model.feat);
          return classification_loss(rec.source_features, dt, {{1, 1}, {1, 2}, {2, 2}}, cfg.loss);
        },
        params, 1e-6, 20, seed);
    report("full_pipeline", err);
  }

  std::cout << "max_relative_error " << fmt17(worst) << "\n";
  if (worst < 1e-4) {
    std::cout << "gradcheck PASS" << std::endl;
    return 0;
  }
  std::cout << "gradcheck FAIL" << std::endl;
  return 3;
}

int cmd_ablate(const std::string& ckpt_path, const std::string& iterations,
               const std::string& windows, const std::string& report,
               const std::string& config_path, int pairs, int window_steps, std::uint64_t seed) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_for_checkpoint(ckpt, config_path);
  std::vector<MetricRow> rows;

  if (!iterations.empty()) {
    std::vector<int> ks;
    std::stringstream ss(iterations);
    std::string item;
    while (std::getline(ss, item, ',')) ks.push_back(std::stoi(item));
    if (ks.empty()) throw UsageError("ablate: empty iteration list");
    const int k_top = *std::max_element(ks.begin(), ks.end());
    RecurrenceConfig rc = cfg.recurrence;
    rc.k_max = k_top;
    rc.dilation_schedule.resize(static_cast<std::size_t>(k_top),
                                cfg.recurrence.dilation_schedule.back());
    EvalSummary summary =
        evaluate_synthetic(ckpt.model, rc, cfg.eval, cfg.heldout, pairs, seed);
    for (int k : ks) {
      std::cout << "iterations " << k << " accuracy "
                << fmt17(summary.mean_accuracy_at[static_cast<std::size_t>(k)]) << " mean_error "
                << fmt17(summary.mean_error_at[static_cast<std::size_t>(k)]) << "\n";
      rows.push_back({"iterations_" + std::to_string(k), "accuracy",
                      summary.mean_accuracy_at[static_cast<std::size_t>(k)]});
      rows.push_back({"iterations_" + std::to_string(k), "mean_error",
                      summary.mean_error_at[static_cast<std::size_t>(k)]});
    }
  }

  if (!windows.empty()) {
    // Window size changes the matcher input width, so each entry trains a
    // fresh desk-scale model.
    std::vector<int> radii;
    std::stringstream ss(windows);
    std::string item;
    while (std::getline(ss, item, ',')) radii.push_back(std::stoi(item));
    for (int r : radii) {
      TrainConfig wcfg = cfg;
      wcfg.steps = window_steps;
      wcfg.recurrence.window_radius = r;
      wcfg.loss.window_radius = r;
      wcfg.seed = seed;
      std::cout << "training window radius " << r << " (" << wcfg.steps << " steps)" << std::endl;
      TrainResult result = train(wcfg);
      EvalSummary summary = evaluate_synthetic(result.model, wcfg.recurrence, wcfg.eval,
                                               wcfg.heldout, pairs, seed);
      std::cout << "window " << (2 * r + 1) << "x" << (2 * r + 1) << " accuracy "
                << fmt17(summary.mean_accuracy) << "\n";
      rows.push_back({"window_" + std::to_string(2 * r + 1), "accuracy", summary.mean_accuracy});
    }
  }

  if (rows.empty()) throw UsageError("ablate: nothing to do, pass --iterations and/or --windows");
  if (!report.empty()) write_metric_csv(report, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense correspondence via recurrent field refinement"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (1 keeps runs bit-reproducible)");

  std::string config_path, out_dir, ckpt_path, set_dir, report, source_path, target_path;
  std::string iterations, windows;
  int synthetic = 0, count = 16, pairs = 24, window_steps = 300;
  std::uint64_t seed = 1;

  auto* train_cmd = app.add_subcommand("train", "train a model on synthetic pairs");
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  eval_cmd->add_option("--set", set_dir, "directory of generated pairs");
  eval_cmd->add_option("--synthetic", synthetic, "evaluate on N fresh synthetic pairs");
  eval_cmd->add_option("--report", report, "CSV report path");
  eval_cmd->add_option("--config", config_path, "override config");
  eval_cmd->add_option("--seed", seed, "seed for synthetic evaluation");

  auto* warp_cmd = app.add_subcommand("warp", "align two images and emit warped panels");
  warp_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  warp_cmd->add_option("--source", source_path, "source image (PPM)")->required();
  warp_cmd->add_option("--target", target_path, "target image (PPM)")->required();
  warp_cmd->add_option("--out", out_dir, "output directory")->required();
  warp_cmd->add_option("--config", config_path, "override config");

  auto* gen_cmd = app.add_subcommand("gen", "generate synthetic pairs");
  gen_cmd->add_option("--config", config_path, "config file");
  gen_cmd->add_option("--out", out_dir, "output directory")->required();
  gen_cmd->add_option("--count", count, "number of pairs");
  gen_cmd->add_option("--seed", seed, "generation seed");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference audit of the gradients");
  grad_cmd->add_option("--seed", seed, "seed");

  auto* ablate_cmd = app.add_subcommand("ablate", "sweep iteration counts and window sizes");
  ablate_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  ablate_cmd->add_option("--iterations", iterations, "comma list of iteration counts");
  ablate_cmd->add_option("--windows", windows, "comma list of window radii (trains per entry)");
  ablate_cmd->add_option("--report", report, "CSV report path");
  ablate_cmd->add_option("--config", config_path, "override config");
  ablate_cmd->add_option("--pairs", pairs, "evaluation pairs");
  ablate_cmd->add_option("--steps", window_steps, "training steps per window entry");
  ablate_cmd->add_option("--seed", seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error kind=usage msg=\"" << e.what() << "\"" << std::endl;
    return 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir);
    if (eval_cmd->parsed()) {
      return cmd_eval(ckpt_path, set_dir, synthetic, report, config_path, seed, threads);
    }
    if (warp_cmd->parsed()) return cmd_warp(ckpt_path, source_path, target_path, out_dir, config_path);
    if (gen_cmd->parsed()) return cmd_gen(config_path, out_dir, count, seed);
    if (grad_cmd->parsed()) return cmd_gradcheck(seed);
    if (ablate_cmd->parsed()) {
      return cmd_ablate(ckpt_path, iterations, windows, report, config_path, pairs, window_steps,
                        seed);
    }
  } catch (const UsageError& e) {
    std::cerr << "error kind=usage msg=\"" << e.what() << "\"" << std::endl;
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error kind=parse msg=\"" << e.what() << "\"" << std::endl;
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error kind=data msg=\"" << e.what() << "\"" << std::endl;
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error kind=numeric msg=\"" << e.what() << "\"" << std::endl;
    return 3;
  }
  return 1;
}
