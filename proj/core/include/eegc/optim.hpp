#pragma once

#include <string>
#include <vector>

#include "eegc/autograd.hpp"

namespace eegc {

enum class OptimizerKind { Sgd, AdaptiveMoments };

// Plain SGD or adaptive-moments updates over a fixed parameter list.
// Updates are applied in parameter order, element order, so a run is
// reproducible bit for bit.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<ag::TensorPtr> params, double lr);

  // lr_override < 0 keeps the configured rate (used for warmup schedules).
  void step(double lr_override = -1.0);
  void zero_grad();

  OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  std::vector<ag::TensorPtr> params_;
  double lr_;
  // adaptive-moments state
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

OptimizerKind optimizer_from_string(const std::string& s);
const char* to_string(OptimizerKind kind);

}  // namespace eegc
