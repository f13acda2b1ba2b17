#include "eegc/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "eegc/checkpoint.hpp"
#include "eegc/errors.hpp"
#include "eegc/metrics.hpp"
#include "eegc/seed.hpp"

namespace eegc {

using ag::TensorPtr;

std::vector<TensorPtr> CascadeModel::params() const {
  auto out = stage1.params();
  if (stage2) {
    auto p2 = stage2->params();
    out.insert(out.end(), p2.begin(), p2.end());
  }
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> CascadeModel::named_params()
    const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (auto& [n, t] : stage1.named_params())
    out.emplace_back("stage1." + n, t);
  if (stage2)
    for (auto& [n, t] : stage2->named_params())
      out.emplace_back("stage2." + n, t);
  return out;
}

CascadeModel make_cascade(const ModelConfig& config, std::uint64_t seed,
                          bool cascade) {
  CascadeModel m;
  m.stage1 = make_model(config, derive_seed(seed, "stage1"));
  if (cascade) m.stage2 = make_model(config, derive_seed(seed, "stage2"));
  return m;
}

void TrainConfig::validate() const {
  if (!(alpha >= 1.0))
    throw std::invalid_argument("train: alpha must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("train: learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (patience < 0) throw std::invalid_argument("train: patience must be >= 0");
  if (warmup_steps < 0)
    throw std::invalid_argument("train: warmup_steps must be >= 0");
  if (plateau_patience < 0)
    throw std::invalid_argument("train: plateau_patience must be >= 0");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
    throw std::invalid_argument("train: plateau_factor must be in (0, 1)");
}

std::vector<double> compose_stage2_input(const MaskedSegment& observed,
                                         const std::vector<double>& stage1_out) {
  const size_t n = observed.target.samples.size();
  if (stage1_out.size() != n)
    throw std::invalid_argument("compose_stage2_input: length mismatch");
  std::vector<double> out = observed.target.samples;
  for (int idx : observed.spec.missing_indices)
    out[static_cast<size_t>(idx)] = stage1_out[static_cast<size_t>(idx)];
  return out;
}

double weighted_loss(const std::vector<double>& output,
                     const std::vector<double>& target,
                     const std::vector<int>& missing, double alpha,
                     ag::LossKernel kernel) {
  if (output.empty()) throw std::invalid_argument("weighted_loss: empty vectors");
  if (output.size() != target.size())
    throw std::invalid_argument("weighted_loss: length mismatch");
  if (!(alpha >= 1.0))
    throw std::invalid_argument("weighted_loss: alpha must be >= 1");
  std::vector<double> w(output.size(), 1.0);
  for (int idx : missing) {
    if (idx < 0 || idx >= static_cast<int>(output.size()))
      throw std::invalid_argument("weighted_loss: missing index out of range");
    w[static_cast<size_t>(idx)] = alpha;
  }
  double acc = 0.0;
  for (size_t i = 0; i < output.size(); ++i) {
    const double e = output[i] - target[i];
    const double k =
        kernel == ag::LossKernel::SquaredError ? e * e : std::abs(e);
    acc += w[i] * k;
  }
  return acc / static_cast<double>(output.size());
}

CascadeOutput cascade_forward(const CascadeModel& model,
                              const MaskedSegment& masked) {
  CascadeOutput out;
  out.stage1_out = forward(model.stage1, masked.input);
  if (model.is_cascade())
    out.stage2_out =
        forward(*model.stage2, compose_stage2_input(masked, out.stage1_out));
  else
    out.stage2_out = out.stage1_out;
  return out;
}

namespace {

// Batch tensors assembled from a slice of masked segments.
struct Batch {
  TensorPtr input;    // [b, n] masked values
  TensorPtr target;   // [b, n] ground truth
  TensorPtr weight;   // [b, n] alpha on missing, 1 elsewhere
  TensorPtr missing;  // [b, n] 1 on missing, 0 elsewhere
  int count = 0;
};

Batch make_batch(const std::vector<MaskedSegment>& set,
                 const std::vector<size_t>& order, size_t begin, size_t end,
                 int n, double alpha) {
  const int b = static_cast<int>(end - begin);
  Batch batch;
  batch.count = b;
  std::vector<double> in(static_cast<size_t>(b) * n);
  std::vector<double> tg(in.size()), wt(in.size(), 1.0), ms(in.size(), 0.0);
  for (int r = 0; r < b; ++r) {
    const auto& seg = set[order[begin + static_cast<size_t>(r)]];
    std::copy(seg.input.begin(), seg.input.end(),
              in.begin() + static_cast<std::int64_t>(r) * n);
    std::copy(seg.target.samples.begin(), seg.target.samples.end(),
              tg.begin() + static_cast<std::int64_t>(r) * n);
    for (int idx : seg.spec.missing_indices) {
      wt[static_cast<size_t>(r * n + idx)] = alpha;
      ms[static_cast<size_t>(r * n + idx)] = 1.0;
    }
  }
  batch.input = ag::Tensor::from_values({b, n}, std::move(in));
  batch.target = ag::Tensor::from_values({b, n}, std::move(tg));
  batch.weight = ag::Tensor::from_values({b, n}, std::move(wt));
  batch.missing = ag::Tensor::from_values({b, n}, std::move(ms));
  return batch;
}

enum class Phase { Joint, Stage1Only, Stage2Only };

TensorPtr batch_loss(const CascadeModel& model, const Batch& batch,
                     const TrainConfig& cfg, Phase phase) {
  auto out1 = forward_batch(model.stage1, batch.input);
  if (!model.is_cascade() || phase == Phase::Stage1Only)
    return ag::weighted_mean_loss(out1, batch.target, batch.weight,
                                  cfg.loss_kernel);
  auto in2 = ag::select_by_mask(batch.missing, out1, batch.input);
  auto out2 = forward_batch(*model.stage2, in2);
  auto loss2 = ag::weighted_mean_loss(out2, batch.target, batch.weight,
                                      cfg.loss_kernel);
  if (phase == Phase::Stage2Only || cfg.stage_loss == StageLossMode::Stage2Only)
    return loss2;
  auto loss1 = ag::weighted_mean_loss(out1, batch.target, batch.weight,
                                      cfg.loss_kernel);
  return ag::add(loss1, loss2);
}

struct Snapshot {
  std::vector<std::vector<double>> values;

  static Snapshot take(const std::vector<TensorPtr>& params) {
    Snapshot s;
    s.values.reserve(params.size());
    for (const auto& p : params) s.values.push_back(p->value);
    return s;
  }
  void restore(const std::vector<TensorPtr>& params) const {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  }
};

void check_set(const std::vector<MaskedSegment>& set, int n, const char* name) {
  for (const auto& seg : set) {
    if (seg.target.n() != n || static_cast<int>(seg.input.size()) != n)
      throw std::invalid_argument(std::string("train: ") + name +
                                  " segment length != model seq_len");
  }
}

// One training phase with its own early stopping; appends epoch rows.
void run_phase(CascadeModel& model, const std::vector<MaskedSegment>& train_set,
               const std::vector<MaskedSegment>& val_set,
               const TrainConfig& cfg, Phase phase,
               const std::vector<TensorPtr>& trainable, TrainReport& report) {
  const int n = model.config().seq_len;
  const auto& monitor_set = val_set.empty() ? train_set : val_set;

  Optimizer opt(cfg.optimizer, trainable, cfg.learning_rate);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  double best = std::numeric_limits<double>::infinity();
  Snapshot best_weights;
  int since_best = 0;
  int since_decay = 0;
  double lr_scale = 1.0;
  const int epoch_base = static_cast<int>(report.epochs.size());

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_acc = 0.0;
    int seen = 0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      Batch batch = make_batch(train_set, order, begin, end, n, cfg.alpha);
      auto loss = batch_loss(model, batch, cfg, phase);
      const double loss_value = loss->item();
      if (!std::isfinite(loss_value))
        throw TrainingDiverged("training diverged at epoch " +
                               std::to_string(epoch_base + epoch) +
                               " (non-finite loss)");
      ag::backward(loss, ag::FreeGraph::Yes);
      const double ramp =
          cfg.warmup_steps > 0
              ? std::min(1.0, static_cast<double>(report.total_steps + 1) /
                                  cfg.warmup_steps)
              : 1.0;
      opt.step(cfg.learning_rate * lr_scale * ramp);
      opt.zero_grad();
      ++report.total_steps;
      loss_acc += loss_value * batch.count;
      seen += batch.count;
    }

    // When a cascade is trained stage1-first, monitor only the stage under
    // training; otherwise monitor the final output.
    const int eval_batch = std::max(cfg.batch_size, 32);
    std::pair<double, double> nr;
    if (phase == Phase::Stage1Only) {
      CascadeModel probe;
      probe.stage1 = model.stage1;
      nr = evaluate_nrmse(probe, monitor_set, eval_batch);
    } else {
      nr = evaluate_nrmse(model, monitor_set, eval_batch);
    }

    EpochStats row;
    row.epoch = epoch_base + epoch;
    row.train_loss = loss_acc / std::max(1, seen);
    row.val_nrmse_missing = nr.first;
    row.val_nrmse_all = nr.second;
    report.epochs.push_back(row);

    if (nr.first < best) {
      best = nr.first;
      best_weights = Snapshot::take(trainable);
      report.best_epoch = row.epoch;
      report.best_nrmse_missing = best;
      since_best = 0;
      since_decay = 0;
    } else {
      ++since_best;
      ++since_decay;
    }
    if (cfg.target_nrmse > 0.0 && nr.first < cfg.target_nrmse) break;
    if (!val_set.empty() && since_best > cfg.patience) break;
    if (cfg.plateau_patience > 0 && since_decay >= cfg.plateau_patience &&
        lr_scale > 0.05) {
      lr_scale *= cfg.plateau_factor;
      since_decay = 0;
    }
  }
  if (!best_weights.values.empty()) best_weights.restore(trainable);
}

}  // namespace

std::pair<double, double> evaluate_nrmse(const CascadeModel& model,
                                         const std::vector<MaskedSegment>& set,
                                         int batch_size) {
  if (set.empty()) throw std::invalid_argument("evaluate_nrmse: empty set");
  ag::NoGradGuard no_grad;
  const int n = model.config().seq_len;
  double acc_missing = 0.0, acc_all = 0.0;

  std::vector<size_t> order(set.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t begin = 0; begin < set.size();
       begin += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(set.size(), begin + static_cast<size_t>(batch_size));
    Batch batch = make_batch(set, order, begin, end, n, 1.0);
    auto out = forward_batch(model.stage1, batch.input);
    if (model.is_cascade()) {
      auto in2 = ag::select_by_mask(batch.missing, out, batch.input);
      out = forward_batch(*model.stage2, in2);
    }
    for (size_t r = begin; r < end; ++r) {
      const auto& seg = set[r];
      const auto* gen = out->value.data() + (r - begin) * static_cast<size_t>(n);
      std::vector<double> gen_vec(gen, gen + n);
      acc_missing += nrmse(seg.target.samples, gen_vec,
                           seg.spec.missing_indices);
      acc_all += nrmse_all(seg.target.samples, gen_vec);
    }
  }
  const double count = static_cast<double>(set.size());
  return {acc_missing / count, acc_all / count};
}

TrainReport train(CascadeModel& model,
                  const std::vector<MaskedSegment>& train_set,
                  const std::vector<MaskedSegment>& val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const int n = model.config().seq_len;
  check_set(train_set, n, "train");
  check_set(val_set, n, "val");

  TrainReport report;
  if (cfg.sequential && model.is_cascade()) {
    run_phase(model, train_set, val_set, cfg, Phase::Stage1Only,
              model.stage1.params(), report);
    model.stage1.set_requires_grad(false);
    run_phase(model, train_set, val_set, cfg, Phase::Stage2Only,
              model.stage2->params(), report);
    model.stage1.set_requires_grad(true);
  } else {
    run_phase(model, train_set, val_set, cfg, Phase::Joint, model.params(),
              report);
  }
  return report;
}

void save_model(const std::string& path, const CascadeModel& model,
                const std::map<std::string, std::string>& extra_meta) {
  const auto& c = model.config();
  std::map<std::string, std::string> meta = extra_meta;
  meta["arch"] = model.is_cascade() ? "cascade" : "basic";
  meta["n_encoders"] = std::to_string(c.n_encoders);
  meta["n_decoders"] = std::to_string(c.n_decoders);
  meta["d_qkv"] = std::to_string(c.d_qkv);
  meta["n_heads"] = std::to_string(c.n_heads);
  meta["d_model"] = std::to_string(c.d_model);
  meta["d_ff"] = std::to_string(c.d_ff);
  meta["seq_len"] = std::to_string(c.seq_len);
  char eps[32];
  std::snprintf(eps, sizeof eps, "%.17g", c.ln_eps);
  meta["ln_eps"] = eps;
  save_checkpoint(path, model.named_params(), meta);
}

CascadeModel load_model(const std::string& path,
                        std::map<std::string, std::string>* meta_out) {
  Checkpoint ckpt = load_checkpoint(path);
  auto need = [&](const char* key) -> const std::string& {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end())
      throw DataError("checkpoint: missing meta key '" + std::string(key) + "'");
    return it->second;
  };
  ModelConfig c;
  c.n_encoders = std::stoi(need("n_encoders"));
  c.n_decoders = std::stoi(need("n_decoders"));
  c.d_qkv = std::stoi(need("d_qkv"));
  c.n_heads = std::stoi(need("n_heads"));
  c.d_model = std::stoi(need("d_model"));
  c.d_ff = std::stoi(need("d_ff"));
  c.seq_len = std::stoi(need("seq_len"));
  c.ln_eps = std::stod(need("ln_eps"));
  c.validate();
  const bool cascade = need("arch") == "cascade";

  CascadeModel model = make_cascade(c, 0, cascade);
  auto named = model.named_params();
  if (named.size() != ckpt.tensors.size())
    throw DataError("checkpoint: tensor count does not match architecture");
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& [want_name, param] = named[i];
    const auto& [got_name, loaded] = ckpt.tensors[i];
    if (want_name != got_name)
      throw DataError("checkpoint: unexpected tensor '" + got_name +
                      "' (wanted '" + want_name + "')");
    if (loaded->shape != param->shape)
      throw DataError("checkpoint: shape mismatch for '" + got_name + "'");
    param->value = loaded->value;
  }
  if (meta_out) *meta_out = ckpt.meta;
  return model;
}

}  // namespace eegc
