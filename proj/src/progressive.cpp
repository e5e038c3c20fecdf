#include "plan/progressive.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "plan/kernels.hpp"

namespace plan::progressive {

double RowProjector::frobenius_norm() const {
  return std::sqrt(static_cast<double>(kept.size()));
}

Tensor apply_projector(const RowProjector& p, const Tensor& x) {
  if (x.rows() != p.source_rows)
    throw std::invalid_argument("apply_projector: row count mismatch");
  return kern::gather_rows(x, p.kept);
}

SampleGraph build_sample_graph(ad::Tape& tape, ad::Var img_local, ad::Var txt_local,
                               const align::ModelVars& model, const SampleGraphOptions& opt) {
  using namespace ad;
  opt.cfg.validate();
  SampleGraph out;
  if (opt.mode == LossMode::global_only) return out;

  const std::size_t L = tape.val(txt_local).rows();
  Var proj = affine_rows(tape, img_local, model.g_weight, model.g_bias);

  std::vector<std::size_t> working(L);
  std::iota(working.begin(), working.end(), 0);
  Var hist;  // previous S~ rows, aligned with the working set
  const bool refine = opt.mode == LossMode::joint;

  for (int t = 1; t <= opt.cfg.T; ++t) {
    Var words = gather_rows(tape, txt_local, working);
    Var s_t = matmul_nt(tape, words, proj);
    Var m = s_t;
    if (t > 1) {
      Var h = hist;
      if (opt.replay != nullptr && opt.replay->use_histories)
        h = tape.leaf(opt.replay->histories.at(t - 2));
      else if (opt.detach_history)
        h = tape.leaf(tape.val(hist));
      out.histories.push_back(tape.val(h));
      m = linear_mix(tape, s_t, h, opt.cfg.delta, 1.0 - opt.cfg.delta);
    }

    {
      const Tensor& mval = tape.val(m);
      for (std::size_t rel = 0; rel < working.size(); ++rel)
        out.last_rows[working[rel]] = mval.row(rel);
    }

    const std::vector<std::size_t>* replay_sel = nullptr;
    if (opt.replay != nullptr) replay_sel = &opt.replay->selections.at(t - 1);
    Rng rng(substream_seed(opt.ctx.seed, opt.ctx.epoch, opt.ctx.sample,
                           static_cast<std::uint64_t>(t)));
    align::FlaVars fla =
        align::build_f_la(tape, m, img_local, model, refine, opt.cfg.rho,
                          opt.cfg.gumbel_temperature, &rng, replay_sel, opt.allow_z_fallback);
    if (fla.z_fallback) ++out.z_fallback_count;

    out.local_losses.push_back(
        loss::build_local_loss(tape, fla.pooled, words, fla.selection, opt.cfg.tau2).total);
    out.selections.push_back(fla.selection);

    std::vector<std::size_t> next;
    next.reserve(fla.selection.size());
    for (std::size_t rel : fla.selection) next.push_back(working[rel]);
    out.surviving.push_back(next);
    hist = gather_rows(tape, m, fla.selection);
    working = std::move(next);
  }
  out.s_tilde_final = tape.val(hist);
  return out;
}

ProgressiveState progressive_step(const ProgressiveState& prev, const Tensor& local_text,
                                  const Tensor& local_image, const align::ProjectionParams& g,
                                  const align::ProjectionParams& pool,
                                  const align::AlignConfig& cfg, Rng& rng) {
  if (prev.surviving.empty()) throw std::invalid_argument("progressive_step: empty survivor set");
  const Tensor words = kern::gather_rows(local_text, prev.surviving);
  const Tensor s_t = align::word_pixel_similarity(words, align::project_image(local_image, g));
  Tensor m;
  if (prev.t == 0) {
    m = s_t;  // S~_0 := S_1, so the first blend is the identity
  } else {
    if (!prev.s_tilde.same_shape(s_t))
      throw std::invalid_argument("progressive_step: history shape mismatch");
    m = kern::linear_mix(s_t, prev.s_tilde, cfg.delta, 1.0 - cfg.delta);
  }

  std::vector<std::size_t> selection;
  Tensor pooled;
  {
    ad::Tape tape;
    align::ModelVars model;
    model.g_weight = tape.leaf(g.weight);
    model.g_bias = tape.leaf(g.bias);
    model.pool_weight = tape.leaf(pool.weight);
    model.pool_bias = tape.leaf(pool.bias);
    model.alpha = tape.leaf(Tensor::scalar(cfg.alpha));
    model.beta = tape.leaf(Tensor::scalar(cfg.beta));
    ad::Var img = tape.leaf(local_image);
    ad::Var mv = tape.leaf(m);
    align::FlaVars fla = align::build_f_la(tape, mv, img, model, true, cfg.rho,
                                           cfg.gumbel_temperature, &rng, nullptr, true);
    selection = fla.selection;
    pooled = tape.val(fla.pooled);
  }

  ProgressiveState next;
  next.t = prev.t + 1;
  for (std::size_t rel : selection) next.surviving.push_back(prev.surviving[rel]);
  next.s_tilde = kern::gather_rows(m, selection);
  next.history = prev.history;
  loss::LocalLossResult ll = loss::local_contrastive_loss(pooled, words, selection, cfg.tau2);
  next.history.push_back({next.surviving, ll.value});
  return next;
}

std::pair<ProgressiveState, std::vector<IterationLosses>> run_progressive(
    const Tensor& local_text, const Tensor& local_image, const align::ProjectionParams& g,
    const align::ProjectionParams& pool, const align::AlignConfig& cfg,
    const SubstreamCtx& ctx) {
  ad::Tape tape;
  align::ModelVars model;
  model.g_weight = tape.leaf(g.weight);
  model.g_bias = tape.leaf(g.bias);
  model.pool_weight = tape.leaf(pool.weight);
  model.pool_bias = tape.leaf(pool.bias);
  model.alpha = tape.leaf(Tensor::scalar(cfg.alpha));
  model.beta = tape.leaf(Tensor::scalar(cfg.beta));
  ad::Var img = tape.leaf(local_image);
  ad::Var txt = tape.leaf(local_text);
  SampleGraphOptions opt;
  opt.cfg = cfg;
  opt.mode = LossMode::joint;
  opt.ctx = ctx;
  SampleGraph sg = build_sample_graph(tape, img, txt, model, opt);

  ProgressiveState st;
  st.t = cfg.T;
  st.surviving = sg.surviving.back();
  st.s_tilde = sg.s_tilde_final;
  std::vector<IterationLosses> losses;
  for (int t = 0; t < cfg.T; ++t) {
    st.history.push_back({sg.surviving[t], tape.val(sg.local_losses[t])[0]});
    losses.push_back({0.0, tape.val(sg.local_losses[t])[0]});
  }
  return {std::move(st), std::move(losses)};
}

Tensor geometric_sum_oracle(const std::vector<Tensor>& s_history, const Tensor& s0_tilde,
                            const RowProjector& p, double delta, std::size_t t) {
  if (s_history.size() < t + 1)
    throw std::invalid_argument("geometric_sum_oracle: history length must be >= t+1");
  Tensor acc = kern::scale(apply_projector(p, s_history[t]), delta);
  for (std::size_t k = 1; k <= t; ++k) {
    const double w = delta * std::pow(1.0 - delta, static_cast<double>(k));
    acc = kern::add(acc, kern::scale(apply_projector(p, s_history[t - k]), w));
  }
  const double w0 = std::pow(1.0 - delta, static_cast<double>(t + 1));
  return kern::add(acc, kern::scale(apply_projector(p, s0_tilde), w0));
}

ConvergenceReport verify_convergence(const std::function<Tensor(std::size_t)>& stream,
                                     const Tensor& s0_tilde, double delta, const RowProjector& p,
                                     double m_bound, std::size_t t_max, bool constant_stream) {
  ConvergenceReport r;
  r.recurrence_matches_oracle = true;
  r.partial_sums_bounded = true;
  r.weights_sum_to_one = true;
  r.bound_respected = true;
  r.decay_exact = true;

  std::vector<Tensor> history;
  Tensor s_tilde = apply_projector(p, s0_tilde);
  Tensor partial;  // truncated series without the initial term
  const double init_err_base =
      constant_stream
          ? kern::frobenius_norm(kern::sub(s_tilde, apply_projector(p, stream(0))))
          : 0.0;

  for (std::size_t t = 0; t <= t_max; ++t) {
    const Tensor s_t = stream(t);
    history.push_back(s_t);
    const Tensor ps = apply_projector(p, s_t);
    const double ps_norm = kern::frobenius_norm(ps);
    if (ps_norm > m_bound && r.bound_violation_t < 0) {
      r.bound_respected = false;
      r.bound_violation_t = static_cast<int>(t);
    }

    s_tilde = kern::linear_mix(ps, s_tilde, delta, 1.0 - delta);

    const Tensor oracle = geometric_sum_oracle(history, s0_tilde, p, delta, t);
    const double err = kern::frobenius_norm(kern::sub(s_tilde, oracle));
    r.max_oracle_err = std::max(r.max_oracle_err, err);
    if (err > 1e-10) r.recurrence_matches_oracle = false;

    if (t == 0)
      partial = kern::scale(ps, delta);
    else
      partial = kern::add(kern::scale(partial, 1.0 - delta), kern::scale(ps, delta));
    const double pn = kern::frobenius_norm(partial);
    r.max_partial_norm = std::max(r.max_partial_norm, pn);
    if (pn > m_bound + 1e-9) r.partial_sums_bounded = false;

    double wsum = std::pow(1.0 - delta, static_cast<double>(t + 1));
    for (std::size_t k = 0; k <= t; ++k)
      wsum += delta * std::pow(1.0 - delta, static_cast<double>(k));
    const double werr = std::fabs(wsum - 1.0);
    r.max_weight_err = std::max(r.max_weight_err, werr);
    if (werr > 1e-12) r.weights_sum_to_one = false;

    if (constant_stream && init_err_base > 0.0) {
      const double err_norm = kern::frobenius_norm(kern::sub(s_tilde, ps));
      r.decay_table.push_back(err_norm);
      const double ratio_measured = err_norm / init_err_base;
      const double ratio_predicted = std::pow(1.0 - delta, static_cast<double>(t + 1));
      const double derr = std::fabs(ratio_measured - ratio_predicted);
      r.max_decay_err = std::max(r.max_decay_err, derr);
      if (derr > 1e-10) r.decay_exact = false;
    }
  }
  r.pass = r.recurrence_matches_oracle && r.partial_sums_bounded && r.weights_sum_to_one &&
           r.bound_respected && r.decay_exact;
  return r;
}

}  // namespace plan::progressive
