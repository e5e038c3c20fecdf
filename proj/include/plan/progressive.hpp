#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "plan/align.hpp"
#include "plan/autodiff.hpp"
#include "plan/losses.hpp"
#include "plan/rng.hpp"
#include "plan/tensor.hpp"

namespace plan::progressive {

enum class LossMode { global_only, initial, joint };

// Surviving keyword set and blended similarity across iterations.
struct ProgressiveState {
  int t = 0;
  std::vector<std::size_t> surviving;  // original word indices, ascending
  Tensor s_tilde;                      // [|surviving|, HW]
  struct Record {
    std::vector<std::size_t> surviving;
    double local_loss = 0.0;
  };
  std::vector<Record> history;
};

// Row-removal operator: keeps the listed source rows in order. Each row
// of the implied 0/1 matrix has exactly one 1.
struct RowProjector {
  std::vector<std::size_t> kept;
  std::size_t source_rows = 0;

  double frobenius_norm() const;  // sqrt(|kept|)
};

Tensor apply_projector(const RowProjector& p, const Tensor& x);

// Substream tags so every (epoch, sample, iteration) selection draw is
// reproducible regardless of scheduling.
struct SubstreamCtx {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t sample = 0;
};

// Recorded nondeterministic/discrete choices of a sample forward pass,
// replayable so finite-difference evaluations see a fixed piecewise-
// smooth objective.
struct ReplayPlan {
  std::vector<std::vector<std::size_t>> selections;  // relative, per iteration
  std::vector<Tensor> histories;  // blended S-tilde values fed to iterations 2..T
  bool use_histories = false;
};

struct SampleGraphOptions {
  align::AlignConfig cfg;
  LossMode mode = LossMode::joint;
  bool detach_history = true;
  SubstreamCtx ctx;
  const ReplayPlan* replay = nullptr;  // when set, selections (and
                                       // optionally histories) are replayed
  bool allow_z_fallback = true;
};

struct SampleGraph {
  std::vector<ad::Var> local_losses;                 // per iteration, empty in global_only mode
  std::vector<std::vector<std::size_t>> surviving;   // K_t per iteration (original ids)
  std::vector<std::vector<std::size_t>> selections;  // relative selections (for replay)
  std::vector<Tensor> histories;                     // recorded blend inputs (for replay)
  std::map<std::size_t, Tensor> last_rows;           // original word id -> last surviving row
  Tensor s_tilde_final;
  int z_fallback_count = 0;
};

// Builds the T-iteration progressive alignment graph for one sample.
// img_local/txt_local are tape vars so gradients can reach the feature
// tensors in end-to-end checks.
SampleGraph build_sample_graph(ad::Tape& tape, ad::Var img_local, ad::Var txt_local,
                               const align::ModelVars& model, const SampleGraphOptions& opt);

// One refinement step on plain tensors (Eq.-14 blend + f_LA).
ProgressiveState progressive_step(const ProgressiveState& prev, const Tensor& local_text,
                                  const Tensor& local_image, const align::ProjectionParams& g,
                                  const align::ProjectionParams& pool,
                                  const align::AlignConfig& cfg, Rng& rng);

struct IterationLosses {
  double global_loss = 0.0;  // zero for a single sample (B=1 partition)
  double local_loss = 0.0;
};

// Runs T progressive steps from K_0 = all words; returns the final state
// and per-iteration losses.
std::pair<ProgressiveState, std::vector<IterationLosses>> run_progressive(
    const Tensor& local_text, const Tensor& local_image, const align::ProjectionParams& g,
    const align::ProjectionParams& pool, const align::AlignConfig& cfg, const SubstreamCtx& ctx);

// Direct evaluation of the truncated geometric expansion:
//   sum_{k=0..t} delta (1-delta)^k P S_{t-k} + (1-delta)^{t+1} P S0_tilde
Tensor geometric_sum_oracle(const std::vector<Tensor>& s_history, const Tensor& s0_tilde,
                            const RowProjector& p, double delta, std::size_t t);

struct ConvergenceReport {
  bool recurrence_matches_oracle = false;
  double max_oracle_err = 0.0;
  bool partial_sums_bounded = false;
  double max_partial_norm = 0.0;
  bool weights_sum_to_one = false;
  double max_weight_err = 0.0;
  bool decay_exact = false;  // constant-stream clause; true when not applicable
  double max_decay_err = 0.0;
  bool bound_respected = false;  // ||P S_t||_F <= M for all streamed t
  int bound_violation_t = -1;
  std::vector<double> decay_table;  // ||S~_t - P S||_F per t (constant streams)
  bool pass = false;
};

// Iterates the fixed-projector linear recurrence
//   S~_t = delta P S_t + (1-delta) S~_{t-1},  S~_0 projected once,
// and checks it against the closed form, the partial-sum bound, the
// mixing-weight identity, and (for constant streams) the exact decay
// rate. stream(t) must return S_t for t = 0..t_max.
ConvergenceReport verify_convergence(const std::function<Tensor(std::size_t)>& stream,
                                     const Tensor& s0_tilde, double delta, const RowProjector& p,
                                     double m_bound, std::size_t t_max,
                                     bool constant_stream = false);

}  // namespace plan::progressive
