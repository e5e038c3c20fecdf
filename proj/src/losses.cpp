#include "plan/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "plan/kernels.hpp"

namespace plan::loss {

GlobalLossVars build_global_loss(ad::Tape& tape, ad::Var img_g, ad::Var txt_g, double tau1) {
  using namespace ad;
  if (tau1 <= 0.0) throw std::invalid_argument("global loss: tau1 must be > 0");
  Var logits = scale(tape, matmul_nt(tape, img_g, txt_g), 1.0 / tau1);
  Var pos = diag(tape, logits);
  GlobalLossVars out;
  out.r_from_i = mean_vec(tape, sub(tape, row_lse(tape, logits), pos));
  out.i_from_r = mean_vec(tape, sub(tape, col_lse(tape, logits), pos));
  out.total = s_add(tape, out.r_from_i, out.i_from_r);
  return out;
}

GlobalLossResult global_contrastive_loss(const Tensor& img_g, const Tensor& txt_g, double tau1) {
  if (img_g.rank() != 2 || !img_g.same_shape(txt_g))
    throw std::invalid_argument("global loss: matching [B,D] inputs required");
  if (img_g.rows() < 1) throw std::invalid_argument("global loss: B must be >= 1");
  ad::Tape tape;
  ad::Var vi = tape.leaf(img_g);
  ad::Var vt = tape.leaf(txt_g);
  GlobalLossVars v = build_global_loss(tape, vi, vt, tau1);
  tape.backward(v.total);
  GlobalLossResult r;
  r.value = tape.val(v.total)[0];
  r.r_from_i = tape.val(v.r_from_i)[0];
  r.i_from_r = tape.val(v.i_from_r)[0];
  r.grad_img = tape.grad(vi);
  r.grad_txt = tape.grad(vt);
  return r;
}

LocalLossVars build_local_loss(ad::Tape& tape, ad::Var pooled, ad::Var words,
                               const std::vector<std::size_t>& keyword_indices, double tau2) {
  using namespace ad;
  if (tau2 <= 0.0) throw std::invalid_argument("local loss: tau2 must be > 0");
  if (keyword_indices.empty())
    throw std::invalid_argument("local loss: keyword_indices must be nonempty");
  LocalLossVars out;
  // region anchors
  {
    Var logits = scale(tape, matmul_nt(tape, pooled, words), 1.0 / tau2);
    Var pos = gather_vec(tape, diag(tape, logits), keyword_indices);
    out.i_from_r = s_sub(tape, lse_all(tape, logits), mean_vec(tape, pos));
  }
  // word anchors over the same normalization set
  {
    Var logits = scale(tape, matmul_nt(tape, words, pooled), 1.0 / tau2);
    Var pos = gather_vec(tape, diag(tape, logits), keyword_indices);
    out.r_from_i = s_sub(tape, lse_all(tape, logits), mean_vec(tape, pos));
  }
  out.total = s_add(tape, out.i_from_r, out.r_from_i);
  return out;
}

LocalLossResult local_contrastive_loss(const Tensor& pooled_regions, const Tensor& word_embeds,
                                       const std::vector<std::size_t>& keyword_indices,
                                       double tau2) {
  if (pooled_regions.rank() != 2 || !pooled_regions.same_shape(word_embeds))
    throw std::invalid_argument("local loss: matching [L_t,D] inputs required");
  for (std::size_t i : keyword_indices)
    if (i >= pooled_regions.rows())
      throw std::invalid_argument("local loss: keyword index out of range");
  ad::Tape tape;
  ad::Var vp = tape.leaf(pooled_regions);
  ad::Var vw = tape.leaf(word_embeds);
  LocalLossVars v = build_local_loss(tape, vp, vw, keyword_indices, tau2);
  tape.backward(v.total);
  LocalLossResult r;
  r.value = tape.val(v.total)[0];
  r.i_from_r = tape.val(v.i_from_r)[0];
  r.r_from_i = tape.val(v.r_from_i)[0];
  r.grad_pooled = tape.grad(vp);
  r.grad_words = tape.grad(vw);
  return r;
}

double total_objective(const std::vector<std::pair<double, double>>& per_iteration, int T) {
  if (T < 1 || per_iteration.size() != static_cast<std::size_t>(T))
    throw std::invalid_argument("total_objective: list length must equal T >= 1");
  double s = 0.0;
  for (const auto& [lg, ll] : per_iteration) s += lg + ll;
  return s / static_cast<double>(T);
}

GradCheckReport gradient_check(const std::function<double(const ParamMap&)>& value_fn,
                               const ParamMap& at, const ParamMap& analytic_grads, double h,
                               double tol) {
  if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be > 0");
  GradCheckReport report;
  report.h = h;
  report.tol = tol;
  report.pass = true;
  const double base = value_fn(at);
  if (!std::isfinite(base))
    throw std::runtime_error("gradient_check aborted: objective is non-finite at base point");
  for (const auto& [name, tensor] : at) {
    const auto git = analytic_grads.find(name);
    if (git == analytic_grads.end())
      throw std::invalid_argument("gradient_check: missing analytic gradient for " + name);
    GradCheckEntry e;
    e.name = name;
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      ParamMap p = at;
      p[name][i] = tensor[i] + h;
      const double fp = value_fn(p);
      p[name][i] = tensor[i] - h;
      const double fm = value_fn(p);
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("gradient_check aborted: objective non-finite near " + name);
      const double fd = (fp - fm) / (2.0 * h);
      const double an = git->second[i];
      const double abs_err = std::fabs(fd - an);
      const double rel = abs_err / std::max({std::fabs(fd), std::fabs(an), 1e-2});
      e.max_abs_err = std::max(e.max_abs_err, abs_err);
      e.max_rel_err = std::max(e.max_rel_err, rel);
    }
    e.pass = e.max_rel_err <= tol;
    report.pass = report.pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace plan::loss
