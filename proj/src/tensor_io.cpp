#include "plan/tensor_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "plan/kernels.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace plan::io {

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoErrorKind::io_failure, "cannot open for write: " + tmp);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw IoError(IoErrorKind::io_failure, "write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(IoErrorKind::io_failure, "rename failed: " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::missing_file, "cannot open: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

void write_tensor(const Tensor& t, const std::string& path) {
  if (t.rank() < 1 || t.rank() > 4)
    throw IoError(IoErrorKind::bad_shape, "tensor rank must be 1..4, got " + std::to_string(t.rank()));
  for (std::size_t d : t.shape())
    if (d == 0) throw IoError(IoErrorKind::bad_shape, "zero-sized dimension in " + shape_str(t));
  if (!kern::all_finite(t)) throw IoError(IoErrorKind::non_finite, "non-finite value in tensor");

  std::string out;
  out.reserve(16 + 8 * t.rank() + t.numel() * dtype_size(t.dtype()));
  out.append(kMagic, 8);
  out.push_back(static_cast<char>(t.dtype()));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) put_u64_le(out, d);
  if (t.dtype() == Dtype::f32)
    for (std::size_t i = 0; i < t.numel(); ++i) put_f32_le(out, static_cast<float>(t[i]));
  else
    for (std::size_t i = 0; i < t.numel(); ++i) put_f64_le(out, t[i]);
  write_file_atomic(path, out);
}

Tensor read_tensor(const std::string& path) {
  const std::string buf = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 10) throw IoError(IoErrorKind::truncated, "file too short: " + path);
  if (std::memcmp(p, kMagic, 8) != 0) throw IoError(IoErrorKind::bad_magic, "bad magic: " + path);
  const std::uint8_t dtype_code = p[8];
  if (dtype_code != 1 && dtype_code != 2)
    throw IoError(IoErrorKind::unknown_dtype,
                  "unknown dtype code " + std::to_string(dtype_code) + ": " + path);
  const Dtype dtype = static_cast<Dtype>(dtype_code);
  const std::size_t rank = p[9];
  if (rank < 1 || rank > 4)
    throw IoError(IoErrorKind::bad_shape, "rank must be 1..4, got " + std::to_string(rank));
  if (buf.size() < 10 + 8 * rank) throw IoError(IoErrorKind::truncated, "truncated header: " + path);

  std::vector<std::size_t> shape(rank);
  std::size_t numel = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint64_t d = get_u64_le(p + 10 + 8 * i);
    if (d == 0 || d > (1ULL << 32))
      throw IoError(IoErrorKind::shape_overflow, "implausible dimension: " + path);
    if (numel > SIZE_MAX / d) throw IoError(IoErrorKind::shape_overflow, "shape overflow: " + path);
    shape[i] = static_cast<std::size_t>(d);
    numel *= shape[i];
  }
  const std::size_t payload = numel * dtype_size(dtype);
  const std::size_t header = 10 + 8 * rank;
  if (buf.size() < header + payload)
    throw IoError(IoErrorKind::truncated, "truncated payload: " + path);
  if (buf.size() > header + payload)
    throw IoError(IoErrorKind::bad_shape, "trailing bytes: " + path);

  Tensor t(shape);
  t.set_dtype(dtype);
  const unsigned char* q = p + header;
  if (dtype == Dtype::f32)
    for (std::size_t i = 0; i < numel; ++i) t[i] = static_cast<double>(get_f32_le(q + 4 * i));
  else
    for (std::size_t i = 0; i < numel; ++i) t[i] = get_f64_le(q + 8 * i);
  return t;
}

void DatasetManifest::validate() const {
  if (L < 2) throw IoError(IoErrorKind::bad_manifest, "manifest: L must be >= 2");
  if (H * W < 4) throw IoError(IoErrorKind::bad_manifest, "manifest: H*W must be >= 4");
  if (D < 2) throw IoError(IoErrorKind::bad_manifest, "manifest: D must be >= 2");
}

namespace {

json entry_to_json(const TensorEntry& e) {
  json j;
  j["path"] = e.path;
  j["shape"] = e.shape;
  j["dtype"] = e.dtype == Dtype::f32 ? "f32" : "f64";
  return j;
}

TensorEntry entry_from_json(const json& j) {
  TensorEntry e;
  e.path = j.at("path").get<std::string>();
  e.shape = j.at("shape").get<std::vector<std::size_t>>();
  const std::string d = j.at("dtype").get<std::string>();
  if (d == "f32")
    e.dtype = Dtype::f32;
  else if (d == "f64")
    e.dtype = Dtype::f64;
  else
    throw IoError(IoErrorKind::bad_manifest, "manifest: unknown dtype " + d);
  return e;
}

}  // namespace

void write_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["version"] = m.version;
  j["n_samples"] = m.n_samples;
  j["dims"] = {{"L", m.L}, {"H", m.H}, {"W", m.W}, {"D", m.D}};
  json jt = json::object();
  for (const auto& [name, e] : m.tensors) jt[name] = entry_to_json(e);
  j["tensors"] = jt;
  if (m.truth) {
    j["truth"] = {{"masks", m.truth->masks_path},
                  {"keywords", m.truth->keywords_path},
                  {"labels", m.truth->labels_path},
                  {"n_keywords", m.truth->n_keywords}};
  } else {
    j["truth"] = nullptr;
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::bad_manifest, "manifest parse error: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.L = j.at("dims").at("L").get<std::size_t>();
    m.H = j.at("dims").at("H").get<std::size_t>();
    m.W = j.at("dims").at("W").get<std::size_t>();
    m.D = j.at("dims").at("D").get<std::size_t>();
    for (const auto& [name, je] : j.at("tensors").items()) m.tensors[name] = entry_from_json(je);
    if (j.contains("truth") && !j.at("truth").is_null()) {
      TruthEntries t;
      t.masks_path = j.at("truth").at("masks").get<std::string>();
      t.keywords_path = j.at("truth").at("keywords").get<std::string>();
      t.labels_path = j.at("truth").at("labels").get<std::string>();
      t.n_keywords = j.at("truth").at("n_keywords").get<std::size_t>();
      m.truth = t;
    }
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::bad_manifest, "manifest field error: " + std::string(e.what()));
  }
  m.validate();
  return m;
}

SyntheticTruth Dataset::truth(std::size_t i) const {
  SyntheticTruth t;
  t.class_label = label(i);
  t.region_mask = masks.slice(i);
  t.keyword_indices = keyword_set(i);
  return t;
}

std::vector<std::size_t> Dataset::keyword_set(std::size_t i) const {
  std::vector<std::size_t> k;
  for (std::size_t j = 0; j < keywords.dim(1); ++j)
    k.push_back(static_cast<std::size_t>(keywords(i, j)));
  return k;
}

namespace {

Tensor load_entry(const std::string& base_dir, const DatasetManifest& m, const std::string& name,
                  const std::vector<std::size_t>& expect_shape) {
  auto it = m.tensors.find(name);
  if (it == m.tensors.end())
    throw IoError(IoErrorKind::bad_manifest, "manifest missing tensor entry: " + name);
  const std::string path = (fs::path(base_dir) / it->second.path).string();
  if (!fs::exists(path)) throw IoError(IoErrorKind::missing_file, "missing tensor file: " + path);
  Tensor t = read_tensor(path);
  if (t.shape() != it->second.shape)
    throw IoError(IoErrorKind::dimension_mismatch,
                  "header/manifest shape mismatch for " + name + ": file " + shape_str(t));
  if (t.shape() != expect_shape)
    throw IoError(IoErrorKind::dimension_mismatch,
                  "dimension mismatch for " + name + ": got " + shape_str(t));
  return t;
}

Tensor load_truth_tensor(const std::string& base_dir, const std::string& rel,
                         const std::vector<std::size_t>& expect_shape, const std::string& name) {
  const std::string path = (fs::path(base_dir) / rel).string();
  if (!fs::exists(path)) throw IoError(IoErrorKind::missing_file, "missing truth file: " + path);
  Tensor t = read_tensor(path);
  if (t.shape() != expect_shape)
    throw IoError(IoErrorKind::dimension_mismatch,
                  "dimension mismatch for " + name + ": got " + shape_str(t));
  return t;
}

}  // namespace

Dataset load_dataset(const std::string& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const std::string dir = fs::path(manifest_path).parent_path().string();
  Dataset d;
  d.n_samples = m.n_samples;
  d.L = m.L;
  d.H = m.H;
  d.W = m.W;
  d.D = m.D;
  const std::size_t n = m.n_samples;
  if (n == 0) return d;
  d.img_local = load_entry(dir, m, "img_local", {n, m.H * m.W, m.D});
  d.txt_local = load_entry(dir, m, "txt_local", {n, m.L, m.D});
  d.img_global = load_entry(dir, m, "img_global", {n, m.D});
  d.txt_global = load_entry(dir, m, "txt_global", {n, m.D});
  if (m.truth) {
    d.has_truth = true;
    d.masks = load_truth_tensor(dir, m.truth->masks_path, {n, m.H, m.W}, "masks");
    d.keywords =
        load_truth_tensor(dir, m.truth->keywords_path, {n, m.truth->n_keywords}, "keywords");
    d.labels = load_truth_tensor(dir, m.truth->labels_path, {n}, "labels");
  }
  return d;
}

void write_dataset(const Dataset& d, const std::string& dir) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.n_samples = d.n_samples;
  m.L = d.L;
  m.H = d.H;
  m.W = d.W;
  m.D = d.D;
  auto put = [&](const std::string& name, const Tensor& t) {
    const std::string rel = name + ".tensor";
    write_tensor(t, (fs::path(dir) / rel).string());
    m.tensors[name] = TensorEntry{rel, t.shape(), t.dtype()};
  };
  put("img_local", d.img_local);
  put("txt_local", d.txt_local);
  put("img_global", d.img_global);
  put("txt_global", d.txt_global);
  if (d.has_truth) {
    write_tensor(d.masks, (fs::path(dir) / "truth_masks.tensor").string());
    write_tensor(d.keywords, (fs::path(dir) / "truth_keywords.tensor").string());
    write_tensor(d.labels, (fs::path(dir) / "truth_labels.tensor").string());
    m.truth = TruthEntries{"truth_masks.tensor", "truth_keywords.tensor", "truth_labels.tensor",
                           d.keywords.dim(1)};
  }
  write_manifest(m, (fs::path(dir) / "manifest.json").string());
}

}  // namespace plan::io
