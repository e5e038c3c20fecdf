#pragma once

#include <cstdint>
#include <string>

#include "plan/tensor.hpp"
#include "plan/tensor_io.hpp"

namespace plan::synth {

class SpecError : public std::runtime_error {
 public:
  explicit SpecError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RegionRange {
  std::size_t h_min = 3, h_max = 5;
  std::size_t w_min = 3, w_max = 5;
};

struct SynthSpec {
  std::size_t n_samples = 500;
  std::size_t n_classes = 5;
  std::size_t L = 12;
  std::size_t H = 8, W = 8;
  std::size_t D = 16;
  std::size_t n_keywords = 3;
  RegionRange region;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

SynthSpec spec_from_json_file(const std::string& path);
SynthSpec spec_from_json_text(const std::string& text);
std::string spec_to_json_text(const SynthSpec& spec);

// Orthonormal class concept vectors: Gram-Schmidt on seeded Gaussian
// draws. Requires n_classes <= D.
Tensor concept_vectors(std::size_t n_classes, std::size_t D, std::uint64_t seed);

// Mean over rows, then L2-normalized; the zero vector maps to zero.
Tensor pool_global(const Tensor& local);

// Deterministic function of spec (including seed). Classes are assigned
// stratified (sample i gets class i mod n_classes) so counts stay
// balanced within 1.
io::Dataset generate_dataset(const SynthSpec& spec);

}  // namespace plan::synth
