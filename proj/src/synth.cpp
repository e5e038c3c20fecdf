#include "plan/synth.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "plan/kernels.hpp"
#include "plan/rng.hpp"

using json = nlohmann::json;

namespace plan::synth {

void SynthSpec::validate() const {
  if (n_samples == 0) return;  // empty dataset is legal
  if (n_classes == 0) throw SpecError("synth: n_classes must be >= 1");
  if (n_classes > D) throw SpecError("synth: n_classes must be <= D for orthogonal concepts");
  if (L < 2) throw SpecError("synth: L must be >= 2");
  if (H * W < 4) throw SpecError("synth: H*W must be >= 4");
  if (D < 2) throw SpecError("synth: D must be >= 2");
  if (n_keywords >= L) throw SpecError("synth: n_keywords must be < L");
  if (n_keywords == 0) throw SpecError("synth: n_keywords must be >= 1");
  if (region.h_min == 0 || region.w_min == 0 || region.h_min > region.h_max ||
      region.w_min > region.w_max)
    throw SpecError("synth: invalid region range");
  if (region.h_max > H || region.w_max > W)
    throw SpecError("synth: region does not fit inside HxW");
  if (noise_sigma < 0.0) throw SpecError("synth: noise_sigma must be >= 0");
}

SynthSpec spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SpecError("synth spec parse error: " + std::string(e.what()));
  }
  SynthSpec s;
  try {
    if (j.contains("n_samples")) s.n_samples = j.at("n_samples").get<std::size_t>();
    if (j.contains("n_classes")) s.n_classes = j.at("n_classes").get<std::size_t>();
    if (j.contains("L")) s.L = j.at("L").get<std::size_t>();
    if (j.contains("H")) s.H = j.at("H").get<std::size_t>();
    if (j.contains("W")) s.W = j.at("W").get<std::size_t>();
    if (j.contains("D")) s.D = j.at("D").get<std::size_t>();
    if (j.contains("n_keywords")) s.n_keywords = j.at("n_keywords").get<std::size_t>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("region")) {
      const auto& r = j.at("region");
      s.region.h_min = r.at("h_min").get<std::size_t>();
      s.region.h_max = r.at("h_max").get<std::size_t>();
      s.region.w_min = r.at("w_min").get<std::size_t>();
      s.region.w_max = r.at("w_max").get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw SpecError("synth spec field error: " + std::string(e.what()));
  }
  s.validate();
  return s;
}

SynthSpec spec_from_json_file(const std::string& path) {
  return spec_from_json_text(io::read_file(path));
}

std::string spec_to_json_text(const SynthSpec& s) {
  json j;
  j["n_samples"] = s.n_samples;
  j["n_classes"] = s.n_classes;
  j["L"] = s.L;
  j["H"] = s.H;
  j["W"] = s.W;
  j["D"] = s.D;
  j["n_keywords"] = s.n_keywords;
  j["region"] = {{"h_min", s.region.h_min},
                 {"h_max", s.region.h_max},
                 {"w_min", s.region.w_min},
                 {"w_max", s.region.w_max}};
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

Tensor concept_vectors(std::size_t n_classes, std::size_t D, std::uint64_t seed) {
  if (n_classes > D) throw SpecError("concept_vectors: n_classes must be <= D");
  Rng rng(substream_seed(seed, 0xC0DEULL));
  Tensor v({n_classes, D});
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (int attempt = 0;; ++attempt) {
      Tensor cand({D});
      for (std::size_t k = 0; k < D; ++k) cand[k] = rng.gaussian();
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t k = 0; k < D; ++k) dot += cand[k] * v(p, k);
        for (std::size_t k = 0; k < D; ++k) cand[k] -= dot * v(p, k);
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < D; ++k) norm += cand[k] * cand[k];
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t k = 0; k < D; ++k) v(c, k) = cand[k] / norm;
        break;
      }
      if (attempt > 32) throw SpecError("concept_vectors: degenerate draw");
    }
  }
  return v;
}

Tensor pool_global(const Tensor& local) {
  if (local.rank() != 2 || local.rows() < 1)
    throw SpecError("pool_global: rank-2 input with >= 1 row required");
  return kern::l2_normalize(kern::mean_rows(local));
}

io::Dataset generate_dataset(const SynthSpec& spec) {
  spec.validate();
  io::Dataset d;
  d.n_samples = spec.n_samples;
  d.L = spec.L;
  d.H = spec.H;
  d.W = spec.W;
  d.D = spec.D;
  d.has_truth = true;
  const std::size_t n = spec.n_samples, HW = spec.H * spec.W, L = spec.L, D = spec.D;
  d.img_local = Tensor({std::max<std::size_t>(n, 1), HW, D});
  d.txt_local = Tensor({std::max<std::size_t>(n, 1), L, D});
  d.img_global = Tensor({std::max<std::size_t>(n, 1), D});
  d.txt_global = Tensor({std::max<std::size_t>(n, 1), D});
  d.masks = Tensor({std::max<std::size_t>(n, 1), spec.H, spec.W});
  d.keywords = Tensor({std::max<std::size_t>(n, 1), spec.n_keywords});
  d.labels = Tensor({std::max<std::size_t>(n, 1)});
  if (n == 0) return d;

  const Tensor concepts = concept_vectors(spec.n_classes, D, spec.seed);

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(substream_seed(spec.seed, 0x5A17ULL, i));
    const std::size_t c = i % spec.n_classes;
    d.labels[i] = static_cast<double>(c);

    // planted rectangle
    const std::size_t h =
        spec.region.h_min + rng.below(spec.region.h_max - spec.region.h_min + 1);
    const std::size_t w =
        spec.region.w_min + rng.below(spec.region.w_max - spec.region.w_min + 1);
    const std::size_t r0 = rng.below(spec.H - h + 1);
    const std::size_t c0 = rng.below(spec.W - w + 1);
    for (std::size_t r = r0; r < r0 + h; ++r)
      for (std::size_t cc = c0; cc < c0 + w; ++cc) d.masks(i, r, cc) = 1.0;

    // planted keyword positions: partial Fisher-Yates, then sorted
    std::vector<std::size_t> idx(L);
    for (std::size_t j = 0; j < L; ++j) idx[j] = j;
    for (std::size_t j = 0; j < spec.n_keywords; ++j) {
      const std::size_t k = j + rng.below(L - j);
      std::swap(idx[j], idx[k]);
    }
    std::vector<std::size_t> kw(idx.begin(), idx.begin() + spec.n_keywords);
    std::sort(kw.begin(), kw.end());
    for (std::size_t j = 0; j < spec.n_keywords; ++j)
      d.keywords(i, j) = static_cast<double>(kw[j]);

    // pixel features: noise plus the concept inside the rectangle
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t pr = p / spec.W, pc = p % spec.W;
      const bool in = d.masks(i, pr, pc) != 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        double v = spec.noise_sigma * rng.gaussian();
        if (in) v += concepts(c, k);
        d.img_local(i, p, k) = v;
      }
    }

    // word features: noise, plus the concept at keyword positions and a
    // per-sample unit filler vector at the rest
    for (std::size_t jw = 0; jw < L; ++jw) {
      const bool is_kw = std::binary_search(kw.begin(), kw.end(), jw);
      for (std::size_t k = 0; k < D; ++k) d.txt_local(i, jw, k) = spec.noise_sigma * rng.gaussian();
      if (is_kw) {
        for (std::size_t k = 0; k < D; ++k) d.txt_local(i, jw, k) += concepts(c, k);
      } else {
        Tensor filler({D});
        for (std::size_t k = 0; k < D; ++k) filler[k] = rng.gaussian();
        filler = kern::l2_normalize(filler);
        for (std::size_t k = 0; k < D; ++k) d.txt_local(i, jw, k) += filler[k];
      }
    }

    const Tensor ig = pool_global(d.img_local.slice(i));
    const Tensor tg = pool_global(d.txt_local.slice(i));
    for (std::size_t k = 0; k < D; ++k) {
      d.img_global(i, k) = ig[k];
      d.txt_global(i, k) = tg[k];
    }
  }
  return d;
}

}  // namespace plan::synth
