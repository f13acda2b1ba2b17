#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eegc/autograd.hpp"
#include "eegc/optim.hpp"
#include "eegc/signal.hpp"
#include "eegc/transformer.hpp"

namespace eegc {

// Two-stage completion model. Stage 2 refines stage 1's estimate after the
// observed samples are copied back over it; both stages share the config but
// hold disjoint parameters. A basic (single stage) model has no stage2.
struct CascadeModel {
  ModelWeights stage1;
  std::optional<ModelWeights> stage2;

  bool is_cascade() const { return stage2.has_value(); }
  const ModelConfig& config() const { return stage1.config; }
  std::vector<ag::TensorPtr> params() const;
  std::vector<std::pair<std::string, ag::TensorPtr>> named_params() const;
};

CascadeModel make_cascade(const ModelConfig& config, std::uint64_t seed,
                          bool cascade);

// How the per-stage losses combine when training a cascade jointly.
enum class StageLossMode { Summed, Stage2Only };

struct TrainConfig {
  double alpha = 2.0;          // weighting factor on missing-index errors
  double learning_rate = 1e-4;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 10;           // epochs without improvement before stopping
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::AdaptiveMoments;
  ag::LossKernel loss_kernel = ag::LossKernel::SquaredError;
  bool sequential = false;     // stage1 to convergence first, then stage2
  StageLossMode stage_loss = StageLossMode::Summed;
  int warmup_steps = 100;      // linear learning-rate ramp over first steps
  double target_nrmse = 0.0;   // stop once the monitored NRMSE drops below
  int plateau_patience = 0;    // epochs without improvement before lr decays; 0 off
  double plateau_factor = 0.5;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_nrmse_missing = 0.0;
  double val_nrmse_all = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_nrmse_missing = 0.0;
  int total_steps = 0;
};

// Rebuild a stage-2 input: observed samples verbatim, stage-1 output at the
// missing indices.
std::vector<double> compose_stage2_input(const MaskedSegment& observed,
                                         const std::vector<double>& stage1_out);

// Mean over all indices of w[n]*(output[n]-target[n])^2 with w = alpha on
// the missing indices and 1 elsewhere. At alpha == 1 this is the plain MSE.
double weighted_loss(const std::vector<double>& output,
                     const std::vector<double>& target,
                     const std::vector<int>& missing, double alpha,
                     ag::LossKernel kernel = ag::LossKernel::SquaredError);

struct CascadeOutput {
  std::vector<double> stage1_out;
  std::vector<double> stage2_out;  // equals stage1_out for a basic model
};

// Inference pass through both stages; gradients are not recorded.
CascadeOutput cascade_forward(const CascadeModel& model,
                              const MaskedSegment& masked);

// Batched no-grad evaluation: mean NRMSE over the missing indices and over
// the whole segment, averaged across the set.
std::pair<double, double> evaluate_nrmse(const CascadeModel& model,
                                         const std::vector<MaskedSegment>& set,
                                         int batch_size);

// Minimize the weighted loss (summed over stages for a cascade) with the
// configured optimizer. Early-stops on the validation missing-index NRMSE
// with the given patience; when val is empty the training set is monitored
// instead and patience-based stopping is disabled. The model is left at the
// best weights seen. Throws TrainingDiverged on a non-finite loss.
TrainReport train(CascadeModel& model,
                  const std::vector<MaskedSegment>& train_set,
                  const std::vector<MaskedSegment>& val_set,
                  const TrainConfig& cfg);

// Checkpoint round trip (bit-exact values). extra_meta rides along.
void save_model(const std::string& path, const CascadeModel& model,
                const std::map<std::string, std::string>& extra_meta = {});
CascadeModel load_model(const std::string& path,
                        std::map<std::string, std::string>* meta_out = nullptr);

}  // namespace eegc
