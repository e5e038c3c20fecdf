#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plan/align.hpp"
#include "plan/progressive.hpp"
#include "plan/tensor.hpp"
#include "plan/tensor_io.hpp"

namespace plan::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct PlateauHyper {
  double factor = 0.5;
  int patience = 5;  // epochs without improvement before halving
};

enum class InitMode { zero, identity };

struct TrainConfig {
  int epochs = 250;
  std::size_t batch_size = 64;
  double learning_rate = 1e-2;
  double weight_decay = 1e-6;
  std::uint64_t seed = 0;
  align::AlignConfig align;
  int checkpoint_every = 0;  // steps; 0 keeps only initial + final
  progressive::LossMode mode = progressive::LossMode::joint;
  InitMode init = InitMode::zero;
  bool joint_backprop = false;  // gradients through the blend history
  AdamHyper adam;
  PlateauHyper plateau;
  long max_steps = 0;  // 0 = no cap

  void validate() const;
};

TrainConfig config_from_json_text(const std::string& text);
TrainConfig config_from_json_file(const std::string& path);
std::string config_to_json_text(const TrainConfig& cfg);

// The six trainable tensors. alpha/beta are 1-element tensors.
struct ModelParams {
  Tensor g_weight, g_bias, pool_weight, pool_bias, alpha, beta;

  static ModelParams init(std::size_t d, InitMode mode, double alpha0, double beta0,
                          std::uint64_t seed);
  align::ProjectionParams g() const { return {g_weight, g_bias}; }
  align::ProjectionParams pool() const { return {pool_weight, pool_bias}; }

  // stable iteration order for optimizer/serialization
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::vector<std::pair<std::string, Tensor*>> named();
};

struct AdamState {
  std::vector<Tensor> m, v;  // same order as ModelParams::named()
  long step = 0;
};

// Bias-corrected Adam update with decoupled weight decay.
void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, double lr, double wd,
               const AdamHyper& hp, long step, const std::string& name);

struct Checkpoint {
  long step = 0;
  int epoch = 0;
  std::size_t batch_in_epoch = 0;
  double lr = 0.0;
  double plateau_best = 0.0;
  int plateau_bad_epochs = 0;
  bool plateau_init = false;
  double epoch_loss_accum = 0.0;  // partial-epoch state so resume matches
  std::size_t epoch_batches = 0;
  ModelParams params;
  AdamState adam;
};

void save_checkpoint(const Checkpoint& c, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct TrainResult {
  Checkpoint final;
  std::string metrics_path;
  long steps_run = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

// Runs the optimization loop; writes out_dir/initial/, out_dir/final/,
// periodic out_dir/step_N/ checkpoints and out_dir/metrics.jsonl.
// resume restarts mid-run from a saved checkpoint and reproduces the
// uninterrupted trajectory.
TrainResult train(const io::Dataset& data, const TrainConfig& cfg, const std::string& out_dir,
                  const Checkpoint* resume = nullptr);

// Batch objective used by both the trainer and the gradient checks:
// image global embeddings are re-pooled through g so the global loss is
// trainable. Returns per-iteration loss vars and the total.
struct BatchGraph {
  ad::Var total;
  ad::Var global_loss;
  std::vector<ad::Var> local_means;  // per iteration
  std::vector<progressive::SampleGraph> samples;
};
BatchGraph build_batch_graph(ad::Tape& tape, const io::Dataset& data,
                             const std::vector<std::size_t>& batch, const align::ModelVars& model,
                             const TrainConfig& cfg, std::uint64_t epoch,
                             const std::vector<const progressive::ReplayPlan*>* replays = nullptr);

}  // namespace plan::train
