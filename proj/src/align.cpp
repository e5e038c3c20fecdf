#include "plan/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plan/kernels.hpp"

namespace plan::align {

Tensor project_image(const Tensor& local_image, const ProjectionParams& params) {
  return kern::affine_rows(local_image, params.weight, params.bias);
}

Tensor word_pixel_similarity(const Tensor& local_text, const Tensor& projected_image) {
  return kern::matmul_nt(local_text, projected_image);
}

std::pair<Tensor, Tensor> initial_importance(const Tensor& s, double alpha, double beta) {
  Tensor gw = kern::add(kern::row_mean(s), kern::scale(kern::row_std_pop(s), alpha));
  Tensor gp = kern::add(kern::col_mean(s), kern::scale(kern::col_std_pop(s), beta));
  return {std::move(gw), std::move(gp)};
}

Tensor co_importance(const Tensor& gamma_word, const Tensor& gamma_pix) {
  return kern::softmax_all(kern::outer_sum(gamma_word, gamma_pix));
}

std::pair<Tensor, Tensor> refined_importance(const Tensor& phi, const Tensor& s) {
  Tensor prod = kern::elem_mul(phi, s);
  return {kern::row_sum(prod), kern::col_sum(prod)};
}

RefinedCoImportance refined_co_importance(const Tensor& gamma_word_ref,
                                          const Tensor& gamma_pix_ref, bool allow_fallback) {
  RefinedCoImportance out;
  const double sw = kern::sum_all(gamma_word_ref);
  const double sp = kern::sum_all(gamma_pix_ref);
  out.z = sw + sp;
  if (out.z == 0.0) {
    if (!allow_fallback) throw DegenerateZError();
    out.fallback = true;
    out.w_word = 0.5;
    out.w_pix = 0.5;
  } else {
    out.w_word = sw / out.z;
    out.w_pix = sp / out.z;
  }
  out.phi_ref = kern::softmax_all(kern::outer_sum(kern::scale(gamma_word_ref, out.w_word),
                                                  kern::scale(gamma_pix_ref, out.w_pix)));
  return out;
}

Tensor reweight_similarity(const Tensor& phi_ref, const Tensor& s) {
  return kern::elem_mul(phi_ref, s);
}

Tensor region_features(const Tensor& s_phi, const Tensor& local_image,
                       const ProjectionParams& pool_params) {
  const double inv_hw = 1.0 / static_cast<double>(local_image.rows());
  Tensor pooled = kern::scale(kern::matmul(s_phi, local_image), inv_hw);
  return kern::affine_rows(pooled, pool_params.weight, pool_params.bias);
}

std::size_t keep_count(double rho, std::size_t l_t) {
  // tiny slack so exact products like (2/3)*3 do not round up
  const auto k = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(l_t) - 1e-9));
  return std::max<std::size_t>(1, std::min(k, l_t));
}

std::vector<std::size_t> select_keywords(const Tensor& scores, double rho, double temperature,
                                         Rng& rng) {
  if (scores.rank() != 1 || scores.numel() == 0)
    throw std::invalid_argument("select_keywords: nonempty rank-1 scores required");
  if (temperature < 0.0) throw std::invalid_argument("select_keywords: temperature must be >= 0");
  const std::size_t l_t = scores.numel();
  const std::size_t keep = keep_count(rho, l_t);
  std::vector<double> perturbed(l_t);
  for (std::size_t i = 0; i < l_t; ++i) {
    perturbed[i] = scores[i];
    if (temperature > 0.0) perturbed[i] += temperature * rng.gumbel();
  }
  std::vector<std::size_t> order(l_t);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return perturbed[a] > perturbed[b];  // ties keep lower index first
  });
  std::vector<std::size_t> kept(order.begin(), order.begin() + keep);
  std::sort(kept.begin(), kept.end());
  return kept;
}

AlignState run_local_alignment(const Tensor& local_text, const Tensor& local_image,
                               const ProjectionParams& g, const ProjectionParams& pool,
                               const AlignConfig& cfg, Rng& rng, bool allow_z_fallback) {
  AlignState st;
  st.S = word_pixel_similarity(local_text, project_image(local_image, g));
  st.delta_word = kern::row_std_pop(st.S);
  st.delta_pix = kern::col_std_pop(st.S);
  auto [gw, gp] = initial_importance(st.S, cfg.alpha, cfg.beta);
  st.gamma_word_init = std::move(gw);
  st.gamma_pix_init = std::move(gp);
  st.phi = co_importance(st.gamma_word_init, st.gamma_pix_init);
  auto [gwr, gpr] = refined_importance(st.phi, st.S);
  st.gamma_word_ref = std::move(gwr);
  st.gamma_pix_ref = std::move(gpr);
  RefinedCoImportance rc = refined_co_importance(st.gamma_word_ref, st.gamma_pix_ref,
                                                 allow_z_fallback);
  st.phi_ref = std::move(rc.phi_ref);
  st.w_word = rc.w_word;
  st.w_pix = rc.w_pix;
  st.z = rc.z;
  st.z_fallback = rc.fallback;
  st.s_phi = reweight_similarity(st.phi_ref, st.S);
  st.pooled_regions = region_features(st.s_phi, local_image, pool);
  st.keyword_indices =
      select_keywords(st.gamma_word_ref, cfg.rho, cfg.gumbel_temperature, rng);
  return st;
}

FlaVars build_f_la(ad::Tape& tape, ad::Var m, ad::Var img_local, const ModelVars& model,
                   bool refine, double rho, double temperature, Rng* rng,
                   const std::vector<std::size_t>* replay_selection, bool allow_z_fallback) {
  using namespace ad;
  FlaVars out;

  Var gw = add(tape, row_mean(tape, m), mul_scalar_var(tape, row_std_pop(tape, m), model.alpha));
  Var gp = add(tape, col_mean(tape, m), mul_scalar_var(tape, col_std_pop(tape, m), model.beta));
  Var phi = softmax_all(tape, outer_sum(tape, gw, gp));

  Var phi_used = phi;
  Var sel_scores = gw;
  if (refine) {
    Var prod = elem_mul(tape, phi, m);
    Var gwr = row_sum(tape, prod);
    Var gpr = col_sum(tape, prod);
    Var sw = sum_all(tape, gwr);
    Var sp = sum_all(tape, gpr);
    const double zval = tape.val(sw)[0] + tape.val(sp)[0];
    Var a2;
    if (zval == 0.0) {
      if (!allow_z_fallback) throw DegenerateZError();
      out.z_fallback = true;
      a2 = outer_sum(tape, scale(tape, gwr, 0.5), scale(tape, gpr, 0.5));
    } else {
      Var z = s_add(tape, sw, sp);
      Var ww = s_div(tape, sw, z);
      Var wp = s_div(tape, sp, z);
      a2 = outer_sum(tape, mul_scalar_var(tape, gwr, ww), mul_scalar_var(tape, gpr, wp));
    }
    phi_used = softmax_all(tape, a2);
    sel_scores = gwr;
  }

  out.s_phi = elem_mul(tape, phi_used, m);
  const double inv_hw = 1.0 / static_cast<double>(tape.val(img_local).rows());
  Var pooled_raw = scale(tape, matmul(tape, out.s_phi, img_local), inv_hw);
  out.pooled = affine_rows(tape, pooled_raw, model.pool_weight, model.pool_bias);
  out.sel_scores = sel_scores;

  if (replay_selection != nullptr) {
    out.selection = *replay_selection;
  } else {
    if (rng == nullptr) throw std::invalid_argument("build_f_la: rng required without replay");
    out.selection = select_keywords(tape.val(sel_scores), rho, temperature, *rng);
  }
  return out;
}

}  // namespace plan::align
