#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "plan/autodiff.hpp"
#include "plan/tensor.hpp"

namespace plan::loss {

struct GlobalLossResult {
  double value = 0.0;      // both directions summed
  double r_from_i = 0.0;   // image anchors against all reports
  double i_from_r = 0.0;   // report anchors against all images
  Tensor grad_img;         // d value / d img_g
  Tensor grad_txt;         // d value / d txt_g
};

// InfoNCE over paired global embeddings. Rows are the paired order
// (sample n of img_g matches sample n of txt_g).
GlobalLossResult global_contrastive_loss(const Tensor& img_g, const Tensor& txt_g, double tau1);

struct LocalLossResult {
  double value = 0.0;
  double i_from_r = 0.0;
  double r_from_i = 0.0;
  Tensor grad_pooled;
  Tensor grad_words;
};

// Keyword-region contrastive loss. Positives are the diagonal entries at
// keyword_indices; the normalization set is all L_t x L_t region-word
// pairs in both directions.
LocalLossResult local_contrastive_loss(const Tensor& pooled_regions, const Tensor& word_embeds,
                                       const std::vector<std::size_t>& keyword_indices,
                                       double tau2);

double total_objective(const std::vector<std::pair<double, double>>& per_iteration, int T);

// ---- tape builders (shared with the trainer/pipeline) ----

struct GlobalLossVars {
  ad::Var total, r_from_i, i_from_r;
};
GlobalLossVars build_global_loss(ad::Tape& tape, ad::Var img_g, ad::Var txt_g, double tau1);

struct LocalLossVars {
  ad::Var total, i_from_r, r_from_i;
};
LocalLossVars build_local_loss(ad::Tape& tape, ad::Var pooled, ad::Var words,
                               const std::vector<std::size_t>& keyword_indices, double tau2);

// ---- finite-difference verification harness ----

using ParamMap = std::map<std::string, Tensor>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double h = 0.0, tol = 0.0;
  bool pass = false;
};

// Central differences (f(x+h e) - f(x-h e)) / 2h per coordinate against
// the supplied analytic gradients. Relative error uses
// |fd - an| / max(|fd|, |an|, 1e-2); the floor turns the comparison into
// an absolute check where both gradients are tiny, which is the only
// regime the f64 difference quotient can resolve at h=1e-6.
GradCheckReport gradient_check(const std::function<double(const ParamMap&)>& value_fn,
                               const ParamMap& at, const ParamMap& analytic_grads, double h,
                               double tol);

}  // namespace plan::loss
