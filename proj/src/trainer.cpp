#include "plan/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "plan/kernels.hpp"
#include "plan/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace plan::train {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  align.validate();
}

namespace {

progressive::LossMode mode_from_string(const std::string& s) {
  if (s == "global") return progressive::LossMode::global_only;
  if (s == "initial") return progressive::LossMode::initial;
  if (s == "joint") return progressive::LossMode::joint;
  throw std::invalid_argument("train: unknown loss mode '" + s + "'");
}

std::string mode_to_string(progressive::LossMode m) {
  switch (m) {
    case progressive::LossMode::global_only: return "global";
    case progressive::LossMode::initial: return "initial";
    default: return "joint";
  }
}

}  // namespace

TrainConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("train config parse error: " + std::string(e.what()));
  }
  TrainConfig c;
  try {
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<int>();
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps").get<long>();
    if (j.contains("loss_mode")) c.mode = mode_from_string(j.at("loss_mode").get<std::string>());
    if (j.contains("init")) {
      const std::string s = j.at("init").get<std::string>();
      if (s == "zero")
        c.init = InitMode::zero;
      else if (s == "identity")
        c.init = InitMode::identity;
      else
        throw std::invalid_argument("train: unknown init '" + s + "'");
    }
    if (j.contains("joint_backprop")) c.joint_backprop = j.at("joint_backprop").get<bool>();
    if (j.contains("align")) {
      const auto& a = j.at("align");
      if (a.contains("tau1")) c.align.tau1 = a.at("tau1").get<double>();
      if (a.contains("tau2")) c.align.tau2 = a.at("tau2").get<double>();
      if (a.contains("alpha")) c.align.alpha = a.at("alpha").get<double>();
      if (a.contains("beta")) c.align.beta = a.at("beta").get<double>();
      if (a.contains("rho")) c.align.rho = a.at("rho").get<double>();
      if (a.contains("gumbel_temperature"))
        c.align.gumbel_temperature = a.at("gumbel_temperature").get<double>();
      if (a.contains("delta")) c.align.delta = a.at("delta").get<double>();
      if (a.contains("T")) c.align.T = a.at("T").get<int>();
    }
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      if (a.contains("beta1")) c.adam.beta1 = a.at("beta1").get<double>();
      if (a.contains("beta2")) c.adam.beta2 = a.at("beta2").get<double>();
      if (a.contains("eps")) c.adam.eps = a.at("eps").get<double>();
    }
    if (j.contains("plateau")) {
      const auto& a = j.at("plateau");
      if (a.contains("factor")) c.plateau.factor = a.at("factor").get<double>();
      if (a.contains("patience")) c.plateau.patience = a.at("patience").get<int>();
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("train config field error: " + std::string(e.what()));
  }
  c.validate();
  return c;
}

TrainConfig config_from_json_file(const std::string& path) {
  return config_from_json_text(io::read_file(path));
}

std::string config_to_json_text(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["max_steps"] = c.max_steps;
  j["loss_mode"] = mode_to_string(c.mode);
  j["init"] = c.init == InitMode::zero ? "zero" : "identity";
  j["joint_backprop"] = c.joint_backprop;
  j["align"] = {{"tau1", c.align.tau1},
                {"tau2", c.align.tau2},
                {"alpha", c.align.alpha},
                {"beta", c.align.beta},
                {"rho", c.align.rho},
                {"gumbel_temperature", c.align.gumbel_temperature},
                {"delta", c.align.delta},
                {"T", c.align.T}};
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["plateau"] = {{"factor", c.plateau.factor}, {"patience", c.plateau.patience}};
  return j.dump(2) + "\n";
}

ModelParams ModelParams::init(std::size_t d, InitMode mode, double alpha0, double beta0,
                              std::uint64_t seed) {
  ModelParams p;
  p.g_bias = Tensor({d});
  p.pool_weight = Tensor::identity(d);
  p.pool_bias = Tensor({d});
  p.alpha = Tensor::from({1}, {alpha0});
  p.beta = Tensor::from({1}, {beta0});
  if (mode == InitMode::zero) {
    p.g_weight = Tensor({d, d});
  } else {
    p.g_weight = Tensor::identity(d);
    Rng rng(substream_seed(seed, 0x171ULL));
    for (std::size_t i = 0; i < d * d; ++i) p.g_weight[i] += 0.01 * rng.gaussian();
  }
  return p;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  return {{"g_weight", &g_weight}, {"g_bias", &g_bias},       {"pool_weight", &pool_weight},
          {"pool_bias", &pool_bias}, {"alpha", &alpha},       {"beta", &beta}};
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  return {{"g_weight", &g_weight}, {"g_bias", &g_bias},       {"pool_weight", &pool_weight},
          {"pool_bias", &pool_bias}, {"alpha", &alpha},       {"beta", &beta}};
}

void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, double lr, double wd,
               const AdamHyper& hp, long step, const std::string& name) {
  if (!kern::all_finite(grad))
    throw std::runtime_error("adam_step: non-finite gradient for " + name);
  if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= lr * (mhat / (std::sqrt(vhat) + hp.eps) + wd * param[i]);
  }
}

void save_checkpoint(const Checkpoint& c, const std::string& dir) {
  const fs::path tmp = fs::path(dir + ".tmp");
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);
  auto names = c.params.named();
  for (std::size_t i = 0; i < names.size(); ++i) {
    io::write_tensor(*names[i].second, (tmp / (names[i].first + ".tensor")).string());
    io::write_tensor(c.adam.m[i], (tmp / ("adam_m_" + names[i].first + ".tensor")).string());
    io::write_tensor(c.adam.v[i], (tmp / ("adam_v_" + names[i].first + ".tensor")).string());
  }
  json j;
  j["step"] = c.step;
  j["epoch"] = c.epoch;
  j["batch_in_epoch"] = c.batch_in_epoch;
  j["adam_step"] = c.adam.step;
  j["lr"] = c.lr;
  j["plateau_best"] = c.plateau_best;
  j["plateau_bad_epochs"] = c.plateau_bad_epochs;
  j["plateau_init"] = c.plateau_init;
  j["epoch_loss_accum"] = c.epoch_loss_accum;
  j["epoch_batches"] = c.epoch_batches;
  io::write_file_atomic((tmp / "checkpoint.json").string(), j.dump(2) + "\n");
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  Checkpoint c;
  json j;
  try {
    j = json::parse(io::read_file((fs::path(dir) / "checkpoint.json").string()));
  } catch (const json::exception& e) {
    throw io::IoError(io::IoErrorKind::bad_manifest,
                      "checkpoint parse error: " + std::string(e.what()));
  }
  c.step = j.at("step").get<long>();
  c.epoch = j.at("epoch").get<int>();
  c.batch_in_epoch = j.at("batch_in_epoch").get<std::size_t>();
  c.adam.step = j.at("adam_step").get<long>();
  c.lr = j.at("lr").get<double>();
  c.plateau_best = j.at("plateau_best").get<double>();
  c.plateau_bad_epochs = j.at("plateau_bad_epochs").get<int>();
  c.plateau_init = j.at("plateau_init").get<bool>();
  c.epoch_loss_accum = j.at("epoch_loss_accum").get<double>();
  c.epoch_batches = j.at("epoch_batches").get<std::size_t>();
  auto names = c.params.named();
  for (auto& [name, t] : names) *t = io::read_tensor((fs::path(dir) / (name + ".tensor")).string());
  for (auto& [name, t] : c.params.named()) {
    c.adam.m.push_back(io::read_tensor((fs::path(dir) / ("adam_m_" + name + ".tensor")).string()));
    c.adam.v.push_back(io::read_tensor((fs::path(dir) / ("adam_v_" + name + ".tensor")).string()));
    (void)t;
  }
  return c;
}

BatchGraph build_batch_graph(ad::Tape& tape, const io::Dataset& data,
                             const std::vector<std::size_t>& batch, const align::ModelVars& model,
                             const TrainConfig& cfg, std::uint64_t epoch,
                             const std::vector<const progressive::ReplayPlan*>* replays) {
  using namespace ad;
  BatchGraph out;

  // image global embeddings re-pooled through the learnable projection
  std::vector<Var> img_embeds;
  std::vector<Var> img_vars, txt_vars;
  Tensor txt_globals({batch.size(), data.D});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t i = batch[b];
    Var img = tape.leaf(data.img_local.slice(i));
    Var txt = tape.leaf(data.txt_local.slice(i));
    img_vars.push_back(img);
    txt_vars.push_back(txt);
    Var proj = affine_rows(tape, img, model.g_weight, model.g_bias);
    img_embeds.push_back(l2_normalize_vec(tape, mean_rows(tape, proj)));
    for (std::size_t k = 0; k < data.D; ++k) txt_globals(b, k) = data.txt_global(i, k);
  }
  Var emb = stack_rows(tape, img_embeds);
  Var txtg = tape.leaf(txt_globals);
  out.global_loss = loss::build_global_loss(tape, emb, txtg, cfg.align.tau1).total;

  const int T_eff = cfg.mode == progressive::LossMode::global_only ? 1 : cfg.align.T;
  std::vector<std::vector<Var>> per_iter(static_cast<std::size_t>(T_eff));
  if (cfg.mode != progressive::LossMode::global_only) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      progressive::SampleGraphOptions opt;
      opt.cfg = cfg.align;
      opt.mode = cfg.mode;
      opt.detach_history = !cfg.joint_backprop;
      opt.ctx = {cfg.seed, epoch, batch[b]};
      if (replays != nullptr) opt.replay = (*replays)[b];
      progressive::SampleGraph sg =
          progressive::build_sample_graph(tape, img_vars[b], txt_vars[b], model, opt);
      for (int t = 0; t < T_eff; ++t) per_iter[t].push_back(sg.local_losses[t]);
      out.samples.push_back(std::move(sg));
    }
  }

  // L_total = (1/T) sum_t (L_g + mean_n L_l(t, n))
  Var acc;
  for (int t = 0; t < T_eff; ++t) {
    Var term = out.global_loss;
    if (!per_iter[t].empty()) {
      Var stacked = stack_rows(tape, per_iter[t]);
      Var lmean =
          scale(tape, sum_all(tape, stacked), 1.0 / static_cast<double>(per_iter[t].size()));
      out.local_means.push_back(lmean);
      term = s_add(tape, term, lmean);
    }
    acc = t == 0 ? term : s_add(tape, acc, term);
  }
  out.total = scale(tape, acc, 1.0 / static_cast<double>(T_eff));
  return out;
}

namespace {

std::string jsonl_record(long step, int epoch, double total, double global, double local,
                         double lr, const std::vector<std::size_t>& kw_counts) {
  json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["loss_total"] = total;
  j["loss_global"] = global;
  j["loss_local"] = local;
  j["lr"] = lr;
  j["keyword_counts"] = kw_counts;
  return j.dump();
}

}  // namespace

TrainResult train(const io::Dataset& data, const TrainConfig& cfg, const std::string& out_dir,
                  const Checkpoint* resume) {
  cfg.validate();
  if (data.n_samples == 0 && cfg.epochs > 0)
    throw std::invalid_argument("train: dataset is empty");
  fs::create_directories(out_dir);

  Checkpoint ck;
  if (resume != nullptr) {
    ck = *resume;
  } else {
    ck.params = ModelParams::init(data.D, cfg.init, cfg.align.alpha, cfg.align.beta, cfg.seed);
    for (auto& [name, t] : ck.params.named()) {
      ck.adam.m.push_back(Tensor(t->shape()));
      ck.adam.v.push_back(Tensor(t->shape()));
      (void)name;
    }
    ck.lr = cfg.learning_rate;
    save_checkpoint(ck, (fs::path(out_dir) / "initial").string());
  }

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw io::IoError(io::IoErrorKind::io_failure, "cannot open " + metrics_path);

  TrainResult result;
  result.metrics_path = metrics_path;
  bool first_record = true;
  const std::size_t n = data.n_samples;

  long step = ck.step;
  bool done = cfg.epochs == 0;
  for (int epoch = ck.epoch; epoch < cfg.epochs && !done; ++epoch) {
    // deterministic per-epoch shuffle
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng(substream_seed(cfg.seed, 0xE60CULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = shuffle_rng.below(i);
      std::swap(perm[i - 1], perm[j]);
    }

    const bool resumed_epoch = epoch == ck.epoch && ck.batch_in_epoch > 0;
    double epoch_loss = resumed_epoch ? ck.epoch_loss_accum : 0.0;
    std::size_t epoch_batches = resumed_epoch ? ck.epoch_batches : 0;
    const std::size_t start_batch = (epoch == ck.epoch) ? ck.batch_in_epoch : 0;
    for (std::size_t b0 = start_batch * cfg.batch_size; b0 < n; b0 += cfg.batch_size) {
      std::vector<std::size_t> batch(
          perm.begin() + static_cast<std::ptrdiff_t>(b0),
          perm.begin() + static_cast<std::ptrdiff_t>(std::min(b0 + cfg.batch_size, n)));

      ad::Tape tape;
      align::ModelVars model;
      model.g_weight = tape.leaf(ck.params.g_weight);
      model.g_bias = tape.leaf(ck.params.g_bias);
      model.pool_weight = tape.leaf(ck.params.pool_weight);
      model.pool_bias = tape.leaf(ck.params.pool_bias);
      model.alpha = tape.leaf(ck.params.alpha);
      model.beta = tape.leaf(ck.params.beta);

      BatchGraph bg =
          build_batch_graph(tape, data, batch, model, cfg, static_cast<std::uint64_t>(epoch));
      const double loss_val = tape.val(bg.total)[0];
      if (!std::isfinite(loss_val)) {
        save_checkpoint(ck, (fs::path(out_dir) / "final").string());
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step + 1) +
                                 "; last checkpoint preserved");
      }
      tape.backward(bg.total);

      ad::Var model_vars[6] = {model.g_weight, model.g_bias,     model.pool_weight,
                               model.pool_bias, model.alpha,      model.beta};
      auto named = ck.params.named();
      ++ck.adam.step;
      for (std::size_t pi = 0; pi < named.size(); ++pi) {
        const Tensor& g = tape.grad(model_vars[pi]);
        adam_step(*named[pi].second, g, ck.adam.m[pi], ck.adam.v[pi], ck.lr, cfg.weight_decay,
                  cfg.adam, ck.adam.step, named[pi].first);
      }

      ++step;
      ck.step = step;
      ck.epoch = epoch;
      ck.batch_in_epoch = b0 / cfg.batch_size + 1;
      epoch_loss += loss_val;
      ++epoch_batches;
      ck.epoch_loss_accum = epoch_loss;
      ck.epoch_batches = epoch_batches;

      double local_val = 0.0;
      std::vector<std::size_t> kw_counts;
      if (!bg.local_means.empty()) {
        for (ad::Var lm : bg.local_means) local_val += tape.val(lm)[0];
        local_val /= static_cast<double>(bg.local_means.size());
        for (const auto& sg : bg.samples) kw_counts.push_back(sg.surviving.back().size());
      }
      metrics << jsonl_record(step, epoch, loss_val, tape.val(bg.global_loss)[0], local_val,
                              ck.lr, kw_counts)
              << "\n";
      if (first_record) {
        result.first_loss = loss_val;
        first_record = false;
      }
      result.last_loss = loss_val;

      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
        save_checkpoint(ck, (fs::path(out_dir) / ("step_" + std::to_string(step))).string());
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    if (done) break;
    ck.batch_in_epoch = 0;
    ck.epoch = epoch + 1;
    ck.epoch_loss_accum = 0.0;
    ck.epoch_batches = 0;

    // ReduceLROnPlateau on the epoch-mean objective
    if (epoch_batches > 0) {
      const double mean_loss = epoch_loss / static_cast<double>(epoch_batches);
      if (!ck.plateau_init || mean_loss < ck.plateau_best - 1e-12) {
        ck.plateau_best = mean_loss;
        ck.plateau_init = true;
        ck.plateau_bad_epochs = 0;
      } else if (++ck.plateau_bad_epochs > cfg.plateau.patience) {
        ck.lr *= cfg.plateau.factor;
        ck.plateau_bad_epochs = 0;
      }
    }
  }

  metrics.flush();
  save_checkpoint(ck, (fs::path(out_dir) / "final").string());
  result.final = ck;
  result.steps_run = step;
  return result;
}

}  // namespace plan::train
