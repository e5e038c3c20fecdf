#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "plan/autodiff.hpp"
#include "plan/rng.hpp"
#include "plan/tensor.hpp"

namespace plan::align {

class DegenerateZError : public std::runtime_error {
 public:
  DegenerateZError() : std::runtime_error("refined importance normalizer Z is zero") {}
};

// Affine map g(x) = x W^T + b.
struct ProjectionParams {
  Tensor weight;  // [D, D]
  Tensor bias;    // [D]
};

struct AlignConfig {
  double tau1 = 0.1;
  double tau2 = 0.5;
  double alpha = 0.1;
  double beta = 0.1;
  double rho = 0.7;                // keep ratio per iteration
  double gumbel_temperature = 1.0;
  double delta = 0.5;              // history blend factor
  int T = 3;                       // refinement iterations

  void validate() const {
    if (tau1 <= 0.0 || tau2 <= 0.0) throw std::invalid_argument("align: tau must be > 0");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("align: rho must be in (0,1]");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("align: delta must be in (0,1)");
    if (T < 1) throw std::invalid_argument("align: T must be >= 1");
    if (gumbel_temperature < 0.0)
      throw std::invalid_argument("align: gumbel_temperature must be >= 0");
  }
};

// All intermediate alignment tensors for one sample.
struct AlignState {
  Tensor S;                // [L_t, HW]
  Tensor gamma_word_init;  // [L_t]
  Tensor gamma_pix_init;   // [HW]
  Tensor delta_word;       // row std
  Tensor delta_pix;        // column std
  Tensor phi;              // [L_t, HW]
  Tensor gamma_word_ref;
  Tensor gamma_pix_ref;
  Tensor phi_ref;
  double w_word = 0.5, w_pix = 0.5, z = 0.0;
  bool z_fallback = false;
  Tensor s_phi;            // [L_t, HW]
  Tensor pooled_regions;   // [L_t, D]
  std::vector<std::size_t> keyword_indices;  // sorted ascending
};

Tensor project_image(const Tensor& local_image, const ProjectionParams& params);
Tensor word_pixel_similarity(const Tensor& local_text, const Tensor& projected_image);
std::pair<Tensor, Tensor> initial_importance(const Tensor& s, double alpha, double beta);
Tensor co_importance(const Tensor& gamma_word, const Tensor& gamma_pix);
std::pair<Tensor, Tensor> refined_importance(const Tensor& phi, const Tensor& s);

struct RefinedCoImportance {
  Tensor phi_ref;
  double w_word = 0.5, w_pix = 0.5, z = 0.0;
  bool fallback = false;
};
// Throws DegenerateZError on Z == 0 unless allow_fallback, in which case
// the weights fall back to 0.5/0.5.
RefinedCoImportance refined_co_importance(const Tensor& gamma_word_ref,
                                          const Tensor& gamma_pix_ref,
                                          bool allow_fallback = false);

Tensor reweight_similarity(const Tensor& phi_ref, const Tensor& s);
Tensor region_features(const Tensor& s_phi, const Tensor& local_image,
                       const ProjectionParams& pool_params);

std::size_t keep_count(double rho, std::size_t l_t);

// Gumbel-perturbed top-k over scores; temperature 0 is the deterministic
// top-k with ties broken by lower index. Result sorted ascending.
std::vector<std::size_t> select_keywords(const Tensor& scores, double rho, double temperature,
                                         Rng& rng);

// Eqs of the local-alignment pipeline, composed in order, on raw inputs.
AlignState run_local_alignment(const Tensor& local_text, const Tensor& local_image,
                               const ProjectionParams& g, const ProjectionParams& pool,
                               const AlignConfig& cfg, Rng& rng, bool allow_z_fallback = true);

// ---- differentiable pipeline pieces ----

// Trainable parameters as tape nodes. alpha/beta are 1-element tensors.
struct ModelVars {
  ad::Var g_weight, g_bias, pool_weight, pool_bias, alpha, beta;
};

struct FlaVars {
  ad::Var s_phi;
  ad::Var pooled;
  ad::Var sel_scores;  // refinement scores used for keyword selection
  std::vector<std::size_t> selection;  // relative row indices, sorted
  bool z_fallback = false;
};

// Builds the f_LA graph on matrix M (similarity or blended similarity).
// refine=false skips the co-importance refinement (initial-separation
// loss mode). Selection is non-differentiable: indices are computed from
// values (or replayed) and treated as constants.
FlaVars build_f_la(ad::Tape& tape, ad::Var m, ad::Var img_local, const ModelVars& model,
                   bool refine, double rho, double temperature, Rng* rng,
                   const std::vector<std::size_t>* replay_selection, bool allow_z_fallback = true);

}  // namespace plan::align
