#include "eegc/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "eegc/errors.hpp"

namespace eegc {

Optimizer::Optimizer(OptimizerKind kind, std::vector<ag::TensorPtr> params,
                     double lr)
    : kind_(kind), params_(std::move(params)), lr_(lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
  if (kind_ == OptimizerKind::AdaptiveMoments) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
}

void Optimizer::step(double lr_override) {
  const double lr = lr_override >= 0.0 ? lr_override : lr_;
  if (kind_ == OptimizerKind::Sgd) {
    for (auto& p : params_) {
      if (p->grad.empty()) continue;
      for (size_t i = 0; i < p->value.size(); ++i)
        p->value[i] -= lr * p->grad[i];
    }
    return;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    if (p.grad.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam" || s == "adaptive-moments") return OptimizerKind::AdaptiveMoments;
  throw DataError("unknown optimizer '" + s + "'");
}

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

}  // namespace eegc
