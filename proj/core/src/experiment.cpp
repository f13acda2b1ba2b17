#include "eegc/experiment.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "eegc/edf.hpp"
#include "eegc/errors.hpp"
#include "eegc/seed.hpp"

namespace eegc {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace binio;

namespace {

std::string fmt_g(double v, const char* spec = "%.12g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// segment store

int SegmentStore::num_subjects() const {
  std::set<int> ids;
  for (const auto& s : segments) ids.insert(s.subject);
  return static_cast<int>(ids.size());
}

void save_store(const std::string& path, const SegmentStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("store: cannot open '" + path + "' for writing");
  put_string(out, kStoreMagic);
  put_u32(out, static_cast<std::uint32_t>(store.segments.size()));
  for (const auto& s : store.segments) {
    put_string(out, s.segment.source_id);
    put_u64(out, s.segment.offset);
    put_u32(out, static_cast<std::uint32_t>(s.subject));
    put_u64(out, std::bit_cast<std::uint64_t>(s.scale.raw_min));
    put_u64(out, std::bit_cast<std::uint64_t>(s.scale.raw_max));
    put_u32(out, static_cast<std::uint32_t>(s.segment.samples.size()));
    for (double v : s.segment.samples)
      put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  out.flush();
  if (!out) throw DataError("store: write failed for '" + path + "'");
}

SegmentStore load_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("store: cannot open '" + path + "'");
  if (get_string(in, "store magic") != kStoreMagic)
    throw DataError("store: '" + path + "' is not a " +
                    std::string(kStoreMagic) + " file");
  SegmentStore store;
  const auto n = get_u32(in, "store segment count");
  store.segments.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    StoredSegment s;
    s.segment.source_id = get_string(in, "store source id");
    s.segment.offset = get_u64(in, "store offset");
    s.subject = static_cast<int>(get_u32(in, "store subject"));
    s.scale.raw_min = std::bit_cast<double>(get_u64(in, "store scale"));
    s.scale.raw_max = std::bit_cast<double>(get_u64(in, "store scale"));
    const auto len = get_u32(in, "store segment length");
    s.segment.samples.resize(len);
    for (auto& v : s.segment.samples)
      v = std::bit_cast<double>(get_u64(in, "store samples"));
    store.segments.push_back(std::move(s));
  }
  return store;
}

// ---------------------------------------------------------------------------
// spec parsing

void ExperimentSpec::validate() const {
  if (dataset.segment_len < 2)
    throw DataError("spec: dataset.segment_len must be >= 2");
  if (dataset.stride < 1) throw DataError("spec: dataset.stride must be >= 1");
  if (missing_counts.empty() || positions.empty() || mask_methods.empty() ||
      alphas.empty())
    throw DataError("spec: missing_counts/positions/mask_methods/alphas must be non-empty");
  for (int c : missing_counts)
    if (c < 1 || c > dataset.segment_len)
      throw DataError("spec: missing count out of range");
  for (double a : alphas)
    if (!(a >= 1.0)) throw DataError("spec: alpha must be >= 1");
  const double total = split.train + split.val + split.test;
  if (std::abs(total - 1.0) > 1e-9)
    throw DataError("spec: split fractions must sum to 1");
  if (split.train <= 0.0) throw DataError("spec: train fraction must be positive");
  if (alpha_sweep) {
    if (alpha_sweep->alphas.empty() || alpha_sweep->missing_counts.empty())
      throw DataError("spec: alpha_sweep lists must be non-empty");
    for (double a : alpha_sweep->alphas)
      if (!(a >= 1.0)) throw DataError("spec: alpha must be >= 1");
  }
  model.validate();
  train.validate();
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("spec: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("spec: '" + path + "' is not valid JSON: " + e.what());
  }

  ExperimentSpec spec;
  try {
    const auto& d = j.at("dataset");
    spec.dataset.files = d.at("files").get<std::vector<std::string>>();
    spec.dataset.channel = d.at("channel").get<std::string>();
    spec.dataset.segment_len = d.value("segment_len", 100);
    spec.dataset.stride = d.value("stride", spec.dataset.segment_len);

    if (j.contains("missing_counts"))
      spec.missing_counts = j["missing_counts"].get<std::vector<int>>();
    if (j.contains("positions")) {
      spec.positions.clear();
      for (const auto& p : j["positions"])
        spec.positions.push_back(position_from_string(p.get<std::string>()));
    }
    if (j.contains("mask_methods")) {
      spec.mask_methods.clear();
      for (const auto& m : j["mask_methods"])
        spec.mask_methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("alphas"))
      spec.alphas = j["alphas"].get<std::vector<double>>();
    spec.cascade = j.value("cascade", true);
    spec.cascade_compare = j.value("cascade_compare", false);
    if (j.contains("alpha_sweep")) {
      AlphaSweep sweep;
      sweep.alphas = j["alpha_sweep"].at("alphas").get<std::vector<double>>();
      sweep.missing_counts =
          j["alpha_sweep"].at("missing_counts").get<std::vector<int>>();
      spec.alpha_sweep = std::move(sweep);
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      spec.split.train = s.value("train", 0.6);
      spec.split.val = s.value("val", 0.2);
      spec.split.test = s.value("test", 0.2);
      spec.split.per_subject = s.value("per_subject", true);
    }
    spec.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("model")) {
      const auto& m = j["model"];
      spec.model.n_encoders = m.value("n_encoders", 6);
      spec.model.n_decoders = m.value("n_decoders", 6);
      spec.model.d_qkv = m.value("d_qkv", 16);
      spec.model.n_heads = m.value("n_heads", 4);
      spec.model.d_model = m.value("d_model", 64);
      spec.model.d_ff = m.value("d_ff", 256);
      spec.model.ln_eps = m.value("ln_eps", 1e-5);
    }
    spec.model.seq_len = spec.dataset.segment_len;
    if (j.contains("train")) {
      const auto& t = j["train"];
      spec.train.learning_rate = t.value("learning_rate", 1e-4);
      spec.train.batch_size = t.value("batch_size", 64);
      spec.train.max_epochs = t.value("max_epochs", 200);
      spec.train.patience = t.value("patience", 10);
      spec.train.optimizer =
          optimizer_from_string(t.value("optimizer", std::string("adam")));
      const std::string kernel = t.value("loss_kernel", std::string("squared"));
      if (kernel == "squared")
        spec.train.loss_kernel = ag::LossKernel::SquaredError;
      else if (kernel == "absolute")
        spec.train.loss_kernel = ag::LossKernel::AbsoluteError;
      else
        throw DataError("spec: unknown loss_kernel '" + kernel + "'");
      spec.train.sequential = t.value("sequential", false);
      const std::string mode = t.value("stage_loss", std::string("summed"));
      if (mode == "summed")
        spec.train.stage_loss = StageLossMode::Summed;
      else if (mode == "stage2_only")
        spec.train.stage_loss = StageLossMode::Stage2Only;
      else
        throw DataError("spec: unknown stage_loss '" + mode + "'");
      spec.train.warmup_steps = t.value("warmup_steps", 100);
      spec.train.max_epochs = t.value("max_epochs", spec.train.max_epochs);
      spec.train.target_nrmse = t.value("target_nrmse", 0.0);
      spec.train.plateau_patience = t.value("plateau_patience", 0);
      spec.train.plateau_factor = t.value("plateau_factor", 0.5);
    }
    spec.train.alpha = spec.alphas.front();
  } catch (const json::exception& e) {
    throw DataError("spec: '" + path + "' is malformed: " + e.what());
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// splits

namespace {

// counts per part from fractions; remainders go to train
std::array<size_t, 3> part_sizes(size_t n, const SplitPolicy& p) {
  auto val = static_cast<size_t>(std::floor(p.val * static_cast<double>(n) + 0.5));
  auto test = static_cast<size_t>(std::floor(p.test * static_cast<double>(n) + 0.5));
  if (val + test > n) test = n - val;
  return {n - val - test, val, test};
}

}  // namespace

SplitIndices split_store(const SegmentStore& store, const SplitPolicy& policy,
                         std::uint64_t seed) {
  SplitIndices out;
  std::mt19937_64 rng(derive_seed(seed, "split"));
  if (policy.per_subject) {
    std::vector<int> subjects;
    for (const auto& s : store.segments)
      if (subjects.empty() || std::find(subjects.begin(), subjects.end(),
                                        s.subject) == subjects.end())
        subjects.push_back(s.subject);
    std::sort(subjects.begin(), subjects.end());
    std::shuffle(subjects.begin(), subjects.end(), rng);
    const auto sizes = part_sizes(subjects.size(), policy);
    std::set<int> train_ids(subjects.begin(), subjects.begin() + sizes[0]);
    std::set<int> val_ids(subjects.begin() + sizes[0],
                          subjects.begin() + sizes[0] + sizes[1]);
    for (size_t i = 0; i < store.segments.size(); ++i) {
      const int s = store.segments[i].subject;
      if (train_ids.count(s))
        out.train.push_back(i);
      else if (val_ids.count(s))
        out.val.push_back(i);
      else
        out.test.push_back(i);
    }
  } else {
    std::vector<size_t> idx(store.segments.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto sizes = part_sizes(idx.size(), policy);
    out.train.assign(idx.begin(), idx.begin() + sizes[0]);
    out.val.assign(idx.begin() + sizes[0], idx.begin() + sizes[0] + sizes[1]);
    out.test.assign(idx.begin() + sizes[0] + sizes[1], idx.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// per-setting runs

std::string cell_key(const SettingKey& key) {
  std::string s = "count=" + std::to_string(key.missing_count);
  s += ",pos=";
  s += to_string(key.position);
  s += ",mask=";
  s += to_string(key.method);
  s += ",alpha=" + fmt_g(key.alpha, "%.6g");
  s += ",arch=";
  s += key.cascade ? "cascade" : "basic";
  return s;
}

namespace {

// Mask seeds depend only on the data-facing part of the key so that basic vs
// cascade and different alphas see identical masked segments.
std::string data_key(const SettingKey& key) {
  std::string s = "count=" + std::to_string(key.missing_count);
  s += ",pos=";
  s += to_string(key.position);
  s += ",mask=";
  s += to_string(key.method);
  return s;
}

}  // namespace

std::vector<MaskedSegment> make_masked_set(const SegmentStore& store,
                                           const std::vector<size_t>& indices,
                                           const SettingKey& key,
                                           std::uint64_t data_seed,
                                           const char* role) {
  std::vector<MaskedSegment> out;
  out.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& seg = store.segments[indices[i]].segment;
    const std::string tag = std::string(role) + "/" + std::to_string(i);
    const auto spec =
        build_mask(seg.n(), key.missing_count, key.position,
                   derive_seed(data_seed, "mask/" + tag), key.method);
    out.push_back(
        apply_mask(seg, spec, derive_seed(data_seed, "fill/" + tag)));
  }
  return out;
}

std::vector<TrialRow> evaluate_trials(
    const CascadeModel& model, const std::vector<MaskedSegment>& set,
    const std::vector<const StoredSegment*>& sources, int batch_size) {
  if (set.size() != sources.size())
    throw std::invalid_argument("evaluate_trials: sources size mismatch");
  ag::NoGradGuard no_grad;
  const int n = model.config().seq_len;
  const int k_bins = n / 2;
  std::vector<TrialRow> rows;
  rows.reserve(set.size());

  for (size_t begin = 0; begin < set.size();
       begin += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(set.size(), begin + static_cast<size_t>(batch_size));
    const int b = static_cast<int>(end - begin);
    std::vector<double> in(static_cast<size_t>(b) * n);
    std::vector<double> ms(in.size(), 0.0);
    for (int r = 0; r < b; ++r) {
      const auto& seg = set[begin + static_cast<size_t>(r)];
      std::copy(seg.input.begin(), seg.input.end(),
                in.begin() + static_cast<std::int64_t>(r) * n);
      for (int idx : seg.spec.missing_indices)
        ms[static_cast<size_t>(r * n + idx)] = 1.0;
    }
    auto input = ag::Tensor::from_values({b, n}, std::move(in));
    auto out = forward_batch(model.stage1, input);
    if (model.is_cascade()) {
      auto missing = ag::Tensor::from_values({b, n}, std::move(ms));
      out = forward_batch(*model.stage2,
                          ag::select_by_mask(missing, out, input));
    }

    for (size_t r = begin; r < end; ++r) {
      const auto& seg = set[r];
      const auto& src = *sources[r];
      const double* gen = out->value.data() + (r - begin) * static_cast<size_t>(n);
      std::vector<double> gen_vec(gen, gen + n);

      TrialRow row;
      row.subject = src.subject;
      row.offset = seg.target.offset;
      row.metrics.n_missing = seg.spec.count();
      row.metrics.rmse =
          rmse_missing(seg.target.samples, gen_vec, seg.spec.missing_indices);
      row.metrics.nrmse =
          nrmse(seg.target.samples, gen_vec, seg.spec.missing_indices);
      row.nrmse_all = nrmse_all(seg.target.samples, gen_vec);

      std::vector<double> real_raw(static_cast<size_t>(n)),
          gen_raw(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        real_raw[static_cast<size_t>(i)] =
            src.scale.to_raw(seg.target.samples[static_cast<size_t>(i)]);
        gen_raw[static_cast<size_t>(i)] =
            src.scale.to_raw(gen_vec[static_cast<size_t>(i)]);
      }
      row.metrics.rmse_raw =
          rmse_missing(real_raw, gen_raw, seg.spec.missing_indices);

      // range-normalize both series by the real segment's extremes
      auto [lo_it, hi_it] = std::minmax_element(seg.target.samples.begin(),
                                                seg.target.samples.end());
      const double lo = *lo_it, range = *hi_it - *lo_it;
      std::vector<double> real_n(static_cast<size_t>(n)),
          gen_n(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        real_n[static_cast<size_t>(i)] =
            (seg.target.samples[static_cast<size_t>(i)] - lo) / range;
        gen_n[static_cast<size_t>(i)] =
            (gen_vec[static_cast<size_t>(i)] - lo) / range;
      }
      row.metrics.fd_nrmse = fd_nrmse(real_n, gen_n, k_bins);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

SettingResult run_setting(const SegmentStore& store, const SplitIndices& split,
                          const SettingKey& key, const ModelConfig& model_cfg,
                          TrainConfig train_cfg, std::uint64_t experiment_seed,
                          CascadeModel* model_out) {
  const std::uint64_t cell = derive_seed(experiment_seed, "cell|" + cell_key(key));
  const std::uint64_t data = derive_seed(experiment_seed, "data|" + data_key(key));

  auto train_set = make_masked_set(store, split.train, key, data, "train");
  auto val_set = make_masked_set(store, split.val, key, data, "val");
  auto test_set = make_masked_set(store, split.test, key, data, "test");
  if (train_set.empty()) throw DataError("run_setting: train split is empty");
  if (test_set.empty()) throw DataError("run_setting: test split is empty");

  CascadeModel model =
      make_cascade(model_cfg, derive_seed(cell, "init"), key.cascade);
  train_cfg.alpha = key.alpha;
  train_cfg.seed = derive_seed(cell, "train");

  SettingResult result;
  result.key = key;
  result.report = train(model, train_set, val_set, train_cfg);

  std::vector<const StoredSegment*> sources;
  sources.reserve(split.test.size());
  for (size_t idx : split.test) sources.push_back(&store.segments[idx]);
  result.trials =
      evaluate_trials(model, test_set, sources, train_cfg.batch_size);

  std::vector<MetricsReport> reports;
  std::map<int, std::vector<MetricsReport>> per_subject;
  double acc_missing = 0.0, acc_all = 0.0;
  for (const auto& t : result.trials) {
    reports.push_back(t.metrics);
    per_subject[t.subject].push_back(t.metrics);
    acc_missing += t.metrics.nrmse;
    acc_all += t.nrmse_all;
  }
  result.aggregate = aggregate(reports);
  for (const auto& [subject, rs] : per_subject)
    result.by_subject.emplace(subject, aggregate(rs));
  result.nrmse_missing_mean = acc_missing / static_cast<double>(result.trials.size());
  result.nrmse_all_mean = acc_all / static_cast<double>(result.trials.size());

  if (model_out) *model_out = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// CLI commands

IngestSummary cmd_ingest(const ExperimentSpec& spec, const std::string& out_dir,
                         bool skip_bad) {
  spec.validate();
  fs::create_directories(out_dir);
  SegmentStore store;
  IngestSummary summary;

  for (size_t f = 0; f < spec.dataset.files.size(); ++f) {
    const auto& file = spec.dataset.files[f];
    try {
      auto channel = edf::read_channel(file, spec.dataset.channel);
      auto [normalized, scale] = normalize(channel.samples);
      const std::string source =
          fs::path(file).filename().string() + ":" + spec.dataset.channel;
      auto segments = extract_segments(normalized, spec.dataset.segment_len,
                                       spec.dataset.stride, source);
      for (auto& seg : segments) {
        StoredSegment s;
        s.segment = std::move(seg);
        s.scale = scale;
        s.subject = static_cast<int>(f);
        store.segments.push_back(std::move(s));
      }
      ++summary.files_ok;
    } catch (const DataError& e) {
      if (!skip_bad) throw;
      summary.file_errors.push_back(file + ": " + e.what());
    }
  }
  if (store.segments.empty())
    throw DataError("ingest: no segments produced from the manifest");
  summary.segments = static_cast<int>(store.segments.size());
  save_store((fs::path(out_dir) / "segments.store").string(), store);
  return summary;
}

namespace {

SettingKey first_setting(const ExperimentSpec& spec) {
  SettingKey key;
  key.missing_count = spec.missing_counts.front();
  key.position = spec.positions.front();
  key.method = spec.mask_methods.front();
  key.alpha = spec.alphas.front();
  key.cascade = spec.cascade;
  return key;
}

void write_train_report_csv(const fs::path& path, const TrainReport& report) {
  auto out = open_out(path);
  out << "epoch,train_loss,val_nrmse_missing,val_nrmse_all\n";
  for (const auto& e : report.epochs)
    out << e.epoch << ',' << fmt_g(e.train_loss) << ','
        << fmt_g(e.val_nrmse_missing) << ',' << fmt_g(e.val_nrmse_all) << '\n';
}

void check_store_matches(const SegmentStore& store, const ExperimentSpec& spec) {
  if (store.segments.empty()) throw DataError("store: no segments");
  for (const auto& s : store.segments)
    if (s.segment.n() != spec.dataset.segment_len)
      throw DataError("store: segment length differs from spec segment_len");
}

void append_metric_rows(std::ostream& out, const SettingKey& key,
                        const AggregateReport& agg) {
  const std::string prefix = std::to_string(key.missing_count) + "," +
                             to_string(key.position) + "," +
                             to_string(key.method) + ",";
  auto row = [&](const char* name, const MetricSummary& s) {
    out << prefix << name << ',' << fmt_g(s.mean) << ',' << fmt_g(s.stddev)
        << '\n';
  };
  row("rmse", agg.rmse);
  row("rmse_raw", agg.rmse_raw);
  row("nrmse", agg.nrmse);
  row("fd_nrmse", agg.fd_nrmse);
}

json result_to_json(const SettingResult& r) {
  json j;
  j["key"] = {{"missing_count", r.key.missing_count},
              {"position", to_string(r.key.position)},
              {"mask_method", to_string(r.key.method)},
              {"alpha", r.key.alpha},
              {"cascade", r.key.cascade}};
  j["best_epoch"] = r.report.best_epoch;
  j["best_nrmse_missing"] = r.report.best_nrmse_missing;
  j["epochs_run"] = r.report.epochs.size();
  j["total_steps"] = r.report.total_steps;
  json trials = json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"subject", t.subject},
                      {"offset", t.offset},
                      {"n_missing", t.metrics.n_missing},
                      {"rmse", t.metrics.rmse},
                      {"rmse_raw", t.metrics.rmse_raw},
                      {"nrmse", t.metrics.nrmse},
                      {"fd_nrmse", t.metrics.fd_nrmse},
                      {"nrmse_all", t.nrmse_all}});
  }
  j["trials"] = std::move(trials);
  return j;
}

SettingResult result_from_json(const json& j) {
  SettingResult r;
  r.key.missing_count = j.at("key").at("missing_count").get<int>();
  r.key.position = position_from_string(j.at("key").at("position"));
  r.key.method = method_from_string(j.at("key").at("mask_method"));
  r.key.alpha = j.at("key").at("alpha").get<double>();
  r.key.cascade = j.at("key").at("cascade").get<bool>();
  r.report.best_epoch = j.at("best_epoch").get<int>();
  r.report.best_nrmse_missing = j.at("best_nrmse_missing").get<double>();
  r.report.total_steps = j.at("total_steps").get<int>();

  std::vector<MetricsReport> reports;
  std::map<int, std::vector<MetricsReport>> per_subject;
  double acc_missing = 0.0, acc_all = 0.0;
  for (const auto& t : j.at("trials")) {
    TrialRow row;
    row.subject = t.at("subject").get<int>();
    row.offset = t.at("offset").get<std::uint64_t>();
    row.metrics.n_missing = t.at("n_missing").get<int>();
    row.metrics.rmse = t.at("rmse").get<double>();
    row.metrics.rmse_raw = t.at("rmse_raw").get<double>();
    row.metrics.nrmse = t.at("nrmse").get<double>();
    row.metrics.fd_nrmse = t.at("fd_nrmse").get<double>();
    row.nrmse_all = t.at("nrmse_all").get<double>();
    reports.push_back(row.metrics);
    per_subject[row.subject].push_back(row.metrics);
    acc_missing += row.metrics.nrmse;
    acc_all += row.nrmse_all;
    r.trials.push_back(std::move(row));
  }
  if (r.trials.empty()) throw DataError("grid cell: cached result has no trials");
  r.aggregate = aggregate(reports);
  for (const auto& [subject, rs] : per_subject)
    r.by_subject.emplace(subject, aggregate(rs));
  r.nrmse_missing_mean = acc_missing / static_cast<double>(r.trials.size());
  r.nrmse_all_mean = acc_all / static_cast<double>(r.trials.size());
  return r;
}

// Run a grid cell or reuse its cached result; the cell directory holds the
// checkpoint and a result.json that makes reruns idempotent.
SettingResult run_or_load_cell(const SegmentStore& store,
                               const SplitIndices& split,
                               const ExperimentSpec& spec,
                               const SettingKey& key, const fs::path& out_dir) {
  const fs::path cell_dir = out_dir / "cells" / cell_key(key);
  const fs::path cache = cell_dir / "result.json";
  if (fs::exists(cache)) {
    std::ifstream in(cache);
    json j;
    in >> j;
    return result_from_json(j);
  }
  fs::create_directories(cell_dir);
  CascadeModel model;
  SettingResult result = run_setting(store, split, key, spec.model, spec.train,
                                     spec.seed, &model);
  save_model((cell_dir / "model.eegc").string(), model,
             {{"cell", cell_key(key)}});
  write_train_report_csv(cell_dir / "train_report.csv", result.report);
  auto out = open_out(cache);
  out << result_to_json(result).dump(2) << '\n';
  return result;
}

}  // namespace

void cmd_train(const ExperimentSpec& spec, const std::string& store_path,
               const std::string& out_dir) {
  spec.validate();
  SegmentStore store = load_store(store_path);
  check_store_matches(store, spec);
  fs::create_directories(out_dir);

  const SettingKey key = first_setting(spec);
  const SplitIndices split = split_store(store, spec.split, spec.seed);
  CascadeModel model;
  SettingResult result =
      run_setting(store, split, key, spec.model, spec.train, spec.seed, &model);

  save_model((fs::path(out_dir) / "model.eegc").string(), model,
             {{"cell", cell_key(key)}});
  write_train_report_csv(fs::path(out_dir) / "train_report.csv", result.report);

  auto out = open_out(fs::path(out_dir) / "metrics.csv");
  out << "missing_count,position,mask_method,metric,mean,std\n";
  append_metric_rows(out, key, result.aggregate);
}

void cmd_eval(const ExperimentSpec& spec, const std::string& store_path,
              const std::string& checkpoint_path, const std::string& out_dir) {
  spec.validate();
  SegmentStore store = load_store(store_path);
  check_store_matches(store, spec);
  fs::create_directories(out_dir);

  CascadeModel model = load_model(checkpoint_path);
  if (model.config().seq_len != spec.dataset.segment_len)
    throw DataError("eval: checkpoint seq_len differs from spec segment_len");

  SettingKey key = first_setting(spec);
  key.cascade = model.is_cascade();
  const SplitIndices split = split_store(store, spec.split, spec.seed);
  if (split.test.empty()) throw DataError("eval: test split is empty");

  const std::uint64_t data = derive_seed(spec.seed, "data|" + data_key(key));
  auto test_set = make_masked_set(store, split.test, key, data, "test");
  std::vector<const StoredSegment*> sources;
  for (size_t idx : split.test) sources.push_back(&store.segments[idx]);
  auto trials =
      evaluate_trials(model, test_set, sources, spec.train.batch_size);

  std::vector<MetricsReport> reports;
  std::map<int, std::vector<MetricsReport>> per_subject;
  for (const auto& t : trials) {
    reports.push_back(t.metrics);
    per_subject[t.subject].push_back(t.metrics);
  }

  auto out = open_out(fs::path(out_dir) / "metrics.csv");
  out << "missing_count,position,mask_method,metric,mean,std\n";
  append_metric_rows(out, key, aggregate(reports));

  auto by_subj = open_out(fs::path(out_dir) / "metrics_by_subject.csv");
  by_subj << "subject,missing_count,position,mask_method,metric,mean,std\n";
  for (const auto& [subject, rs] : per_subject) {
    const auto agg = aggregate(rs);
    const std::string prefix =
        std::to_string(subject) + "," + std::to_string(key.missing_count) +
        "," + to_string(key.position) + "," + to_string(key.method) + ",";
    by_subj << prefix << "rmse," << fmt_g(agg.rmse.mean) << ','
            << fmt_g(agg.rmse.stddev) << '\n';
    by_subj << prefix << "rmse_raw," << fmt_g(agg.rmse_raw.mean) << ','
            << fmt_g(agg.rmse_raw.stddev) << '\n';
    by_subj << prefix << "nrmse," << fmt_g(agg.nrmse.mean) << ','
            << fmt_g(agg.nrmse.stddev) << '\n';
    by_subj << prefix << "fd_nrmse," << fmt_g(agg.fd_nrmse.mean) << ','
            << fmt_g(agg.fd_nrmse.stddev) << '\n';
  }

  auto tr = open_out(fs::path(out_dir) / "metrics_trials.csv");
  tr << "missing_count,position,mask_method,subject,offset,rmse,rmse_raw,"
        "nrmse,fd_nrmse,nrmse_all\n";
  for (const auto& t : trials)
    tr << key.missing_count << ',' << to_string(key.position) << ','
       << to_string(key.method) << ',' << t.subject << ',' << t.offset << ','
       << fmt_g(t.metrics.rmse) << ',' << fmt_g(t.metrics.rmse_raw) << ','
       << fmt_g(t.metrics.nrmse) << ',' << fmt_g(t.metrics.fd_nrmse) << ','
       << fmt_g(t.nrmse_all) << '\n';
}

void cmd_grid(const ExperimentSpec& spec, const std::string& store_path,
              const std::string& out_dir) {
  spec.validate();
  SegmentStore store = load_store(store_path);
  check_store_matches(store, spec);
  fs::create_directories(out_dir);
  const SplitIndices split = split_store(store, spec.split, spec.seed);

  // main grid
  auto results = open_out(fs::path(out_dir) / "results.csv");
  results << "missing_count,position,mask_method,metric,mean,std\n";
  for (int count : spec.missing_counts)
    for (PositionMode pos : spec.positions)
      for (MaskMethod method : spec.mask_methods) {
        SettingKey key{count, pos, method, spec.alphas.front(), spec.cascade};
        const SettingResult r = run_or_load_cell(store, split, spec, key, out_dir);
        append_metric_rows(results, key, r.aggregate);
      }

  // cascade vs basic, middle position with zero mask
  if (spec.cascade_compare) {
    auto delta = open_out(fs::path(out_dir) / "cascade_delta.csv");
    delta << "missing_count,subject,nrmse_basic,nrmse_cascade,delta\n";
    for (int count : spec.missing_counts) {
      SettingKey basic{count, PositionMode::Middle, MaskMethod::Zero,
                       spec.alphas.front(), false};
      SettingKey casc = basic;
      casc.cascade = true;
      const SettingResult rb = run_or_load_cell(store, split, spec, basic, out_dir);
      const SettingResult rc = run_or_load_cell(store, split, spec, casc, out_dir);
      for (const auto& [subject, agg_b] : rb.by_subject) {
        const auto it = rc.by_subject.find(subject);
        if (it == rc.by_subject.end()) continue;
        delta << count << ',' << subject << ',' << fmt_g(agg_b.nrmse.mean)
              << ',' << fmt_g(it->second.nrmse.mean) << ','
              << fmt_g(it->second.nrmse.mean - agg_b.nrmse.mean) << '\n';
      }
    }
  }

  // loss-weighting sweep, both entire-segment and missing-part NRMSE
  if (spec.alpha_sweep) {
    auto sweep = open_out(fs::path(out_dir) / "alpha_sweep.csv");
    sweep << "alpha,missing_count,nrmse_missing_mean,nrmse_missing_std,"
             "nrmse_all_mean,nrmse_all_std\n";
    for (double alpha : spec.alpha_sweep->alphas)
      for (int count : spec.alpha_sweep->missing_counts) {
        SettingKey key{count, PositionMode::Middle, MaskMethod::Zero, alpha,
                       spec.cascade};
        const SettingResult r = run_or_load_cell(store, split, spec, key, out_dir);
        double mean_m = 0.0, mean_a = 0.0;
        for (const auto& t : r.trials) {
          mean_m += t.metrics.nrmse;
          mean_a += t.nrmse_all;
        }
        const double n = static_cast<double>(r.trials.size());
        mean_m /= n;
        mean_a /= n;
        double var_m = 0.0, var_a = 0.0;
        for (const auto& t : r.trials) {
          var_m += (t.metrics.nrmse - mean_m) * (t.metrics.nrmse - mean_m);
          var_a += (t.nrmse_all - mean_a) * (t.nrmse_all - mean_a);
        }
        sweep << fmt_g(alpha, "%.6g") << ',' << count << ',' << fmt_g(mean_m)
              << ',' << fmt_g(std::sqrt(var_m / n)) << ',' << fmt_g(mean_a)
              << ',' << fmt_g(std::sqrt(var_a / n)) << '\n';
      }
  }
}

void cmd_complete(const CompleteOptions& opts) {
  CascadeModel model = load_model(opts.checkpoint);
  const int n = model.config().seq_len;

  // raw signal, one sample per line
  std::ifstream in(opts.input_path);
  if (!in) throw DataError("complete: cannot open '" + opts.input_path + "'");
  std::vector<double> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc{})
      throw DataError("complete: bad sample '" + line + "' in '" +
                      opts.input_path + "'");
    raw.push_back(v);
  }
  if (static_cast<int>(raw.size()) != n)
    throw DataError("complete: input has " + std::to_string(raw.size()) +
                    " samples but the checkpoint expects " + std::to_string(n));

  auto [normalized, scale] = normalize(raw);
  Segment segment;
  segment.samples = normalized;
  segment.source_id = opts.input_path;

  MaskSpec mask_spec =
      opts.explicit_indices.empty()
          ? build_mask(n, opts.missing_count, opts.position, opts.mask_seed,
                       opts.method)
          : explicit_mask(n, opts.explicit_indices, opts.method);
  const MaskedSegment masked =
      apply_mask(segment, mask_spec, derive_seed(opts.mask_seed, "fill"));

  const CascadeOutput out = cascade_forward(model, masked);

  // observed samples pass through from the raw input, untouched
  std::vector<bool> is_missing(static_cast<size_t>(n), false);
  for (int idx : mask_spec.missing_indices)
    is_missing[static_cast<size_t>(idx)] = true;
  std::vector<double> completed = raw;
  for (int i = 0; i < n; ++i)
    if (is_missing[static_cast<size_t>(i)])
      completed[static_cast<size_t>(i)] =
          scale.to_raw(out.stage2_out[static_cast<size_t>(i)]);

  auto sig = open_out(opts.out_prefix + ".txt");
  char buf[40];
  for (double v : completed) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    sig << buf;
  }

  auto csv = open_out(opts.out_prefix + ".csv");
  csv << "index,observed,stage1,stage2,real\n";
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<size_t>(i);
    csv << i << ',' << fmt_g(scale.to_raw(masked.input[u]), "%.17g") << ','
        << fmt_g(scale.to_raw(out.stage1_out[u]), "%.17g") << ','
        << fmt_g(scale.to_raw(out.stage2_out[u]), "%.17g") << ','
        << fmt_g(raw[u], "%.17g") << '\n';
  }

  json sidecar;
  sidecar["n"] = n;
  sidecar["missing_indices"] = mask_spec.missing_indices;
  sidecar["position"] = to_string(mask_spec.position);
  sidecar["mask_method"] = to_string(mask_spec.method);
  sidecar["checkpoint"] = opts.checkpoint;
  auto side = open_out(opts.out_prefix + ".mask.json");
  side << sidecar.dump(2) << '\n';
}

}  // namespace eegc
