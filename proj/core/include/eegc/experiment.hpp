#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eegc/cascade.hpp"
#include "eegc/metrics.hpp"
#include "eegc/signal.hpp"

namespace eegc {

// ---------------------------------------------------------------------------
// segment store

// Normalized segment plus everything needed to trace and undo it.
struct StoredSegment {
  Segment segment;
  ScaleRecord scale;
  int subject = 0;  // index of the source file in the manifest
};

struct SegmentStore {
  std::vector<StoredSegment> segments;

  int num_subjects() const;
};

inline constexpr const char* kStoreMagic = "eegc-store-v1";

void save_store(const std::string& path, const SegmentStore& store);
SegmentStore load_store(const std::string& path);

// ---------------------------------------------------------------------------
// experiment description

struct DatasetManifest {
  std::vector<std::string> files;
  std::string channel;
  int segment_len = 100;
  int stride = 100;
};

struct SplitPolicy {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  bool per_subject = true;
};

struct AlphaSweep {
  std::vector<double> alphas;
  std::vector<int> missing_counts;
};

struct ExperimentSpec {
  DatasetManifest dataset;
  std::vector<int> missing_counts{1, 5, 10, 20, 50};
  std::vector<PositionMode> positions{PositionMode::Middle};
  std::vector<MaskMethod> mask_methods{MaskMethod::Zero};
  std::vector<double> alphas{2.0};
  bool cascade = true;
  bool cascade_compare = false;
  std::optional<AlphaSweep> alpha_sweep;
  SplitPolicy split;
  std::uint64_t seed = 1;
  ModelConfig model = ModelConfig::paper_preset();
  TrainConfig train;

  void validate() const;
};

ExperimentSpec load_spec(const std::string& path);

// ---------------------------------------------------------------------------
// splits and per-setting runs

struct SplitIndices {
  std::vector<size_t> train, val, test;
};

// Deterministic split derived from (seed, "split"). Per-subject policy holds
// out whole subjects; otherwise segments are shuffled individually.
SplitIndices split_store(const SegmentStore& store, const SplitPolicy& policy,
                         std::uint64_t seed);

struct SettingKey {
  int missing_count = 10;
  PositionMode position = PositionMode::Middle;
  MaskMethod method = MaskMethod::Zero;
  double alpha = 2.0;
  bool cascade = true;
};

std::string cell_key(const SettingKey& key);

// Masked segments for one setting, masks seeded per segment from the cell.
std::vector<MaskedSegment> make_masked_set(const SegmentStore& store,
                                           const std::vector<size_t>& indices,
                                           const SettingKey& key,
                                           std::uint64_t cell_seed,
                                           const char* role);

struct TrialRow {
  int subject = 0;
  std::uint64_t offset = 0;
  MetricsReport metrics;
  double nrmse_all = 0.0;  // entire-segment NRMSE, for the alpha sweep
};

struct SettingResult {
  SettingKey key;
  TrainReport report;
  std::vector<TrialRow> trials;             // one per test segment
  AggregateReport aggregate;                // over all trials
  std::map<int, AggregateReport> by_subject;
  double nrmse_missing_mean = 0.0;
  double nrmse_all_mean = 0.0;
};

// Train one model for the setting and evaluate it on the test split.
// All randomness is derived from derive_seed(experiment_seed, cell_key).
SettingResult run_setting(const SegmentStore& store, const SplitIndices& split,
                          const SettingKey& key, const ModelConfig& model_cfg,
                          TrainConfig train_cfg, std::uint64_t experiment_seed,
                          CascadeModel* model_out = nullptr);

// Metrics for an already-trained model on prepared masked segments.
std::vector<TrialRow> evaluate_trials(const CascadeModel& model,
                                      const std::vector<MaskedSegment>& set,
                                      const std::vector<const StoredSegment*>& sources,
                                      int batch_size);

// ---------------------------------------------------------------------------
// CLI entry points (the eegc tool wraps these; tests call them directly)

struct IngestSummary {
  int files_ok = 0;
  int segments = 0;
  std::vector<std::string> file_errors;
};

// Parse every manifest file, normalize per recording, cut segments, write
// <out_dir>/segments.store. With skip_bad, per-file parse failures are
// collected instead of fatal.
IngestSummary cmd_ingest(const ExperimentSpec& spec, const std::string& out_dir,
                         bool skip_bad);

// Train the first-of-each-list setting; write model.eegc and
// train_report.csv under out_dir.
void cmd_train(const ExperimentSpec& spec, const std::string& store_path,
               const std::string& out_dir);

// Evaluate a checkpoint on the test split; write metrics.csv (spec columns),
// metrics_by_subject.csv and metrics_trials.csv under out_dir.
void cmd_eval(const ExperimentSpec& spec, const std::string& store_path,
              const std::string& checkpoint_path, const std::string& out_dir);

// Full grid: results.csv over counts x positions x methods, plus
// cascade_delta.csv (cascade vs basic per subject) when cascade_compare is
// set and alpha_sweep.csv when a sweep is configured. Cells are independent
// and idempotent: a rerun reuses finished cells.
void cmd_grid(const ExperimentSpec& spec, const std::string& store_path,
              const std::string& out_dir);

struct CompleteOptions {
  std::string checkpoint;
  std::string input_path;   // text signal, one sample per line
  std::string out_prefix;   // writes <prefix>.txt/.csv/.mask.json
  int missing_count = 10;
  PositionMode position = PositionMode::Middle;
  MaskMethod method = MaskMethod::Zero;
  std::vector<int> explicit_indices;  // overrides count/position when set
  std::uint64_t mask_seed = 0;
};

// Run completion on one raw segment: normalize by its own range, mask,
// run the model, undo the scale. Observed samples pass through verbatim.
void cmd_complete(const CompleteOptions& opts);

}  // namespace eegc
