#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plan/tensor.hpp"

namespace plan::io {

// Binary tensor file: magic "PLANTNSR", u8 dtype (1=f32, 2=f64), u8 rank
// (1..4), rank x u64 LE dims, then the row-major LE payload.
inline constexpr char kMagic[8] = {'P', 'L', 'A', 'N', 'T', 'N', 'S', 'R'};
inline constexpr int kManifestVersion = 1;

enum class IoErrorKind {
  io_failure,
  non_finite,
  bad_shape,
  bad_magic,
  unknown_dtype,
  truncated,
  shape_overflow,
  missing_file,
  dimension_mismatch,
  bad_manifest,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

void write_tensor(const Tensor& t, const std::string& path);
Tensor read_tensor(const std::string& path);

struct TensorEntry {
  std::string path;  // relative to the manifest directory
  std::vector<std::size_t> shape;
  Dtype dtype = Dtype::f64;
};

struct TruthEntries {
  std::string masks_path;     // [n, H, W], 0/1
  std::string keywords_path;  // [n, n_keywords], integer-valued
  std::string labels_path;    // [n]
  std::size_t n_keywords = 0;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::size_t n_samples = 0;
  std::size_t L = 0, H = 0, W = 0, D = 0;
  std::map<std::string, TensorEntry> tensors;
  std::optional<TruthEntries> truth;

  void validate() const;
};

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Ground truth for one synthetic sample.
struct SyntheticTruth {
  int class_label = 0;
  Tensor region_mask;                      // [H, W], 0/1
  std::vector<std::size_t> keyword_indices;
};

// A fully loaded dataset. Samples are yielded in manifest order.
struct Dataset {
  std::size_t n_samples = 0;
  std::size_t L = 0, H = 0, W = 0, D = 0;
  Tensor img_local;   // [n, H*W, D]
  Tensor txt_local;   // [n, L, D]
  Tensor img_global;  // [n, D]
  Tensor txt_global;  // [n, D]
  bool has_truth = false;
  Tensor masks;     // [n, H, W]
  Tensor keywords;  // [n, n_keywords]
  Tensor labels;    // [n]

  std::size_t hw() const { return H * W; }
  SyntheticTruth truth(std::size_t i) const;
  std::vector<std::size_t> keyword_set(std::size_t i) const;
  int label(std::size_t i) const { return static_cast<int>(labels[i]); }
};

// Loads manifest + all referenced tensor files; validates dimensions.
Dataset load_dataset(const std::string& manifest_path);

// Writes the canonical tensor set plus manifest under dir/.
void write_dataset(const Dataset& d, const std::string& dir);

// Atomic file write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace plan::io
