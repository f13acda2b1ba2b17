#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace eegc::ag {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major double tensor doubling as a node in a reverse-mode graph.
// Leaves carry parameters or constants; interior nodes remember their
// parents and how to push gradients back to them.
class Tensor {
 public:
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily; same shape as value
  bool requires_grad = false;
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;  // empty on leaves

  static TensorPtr leaf(Shape shape, bool requires_grad = false);
  static TensorPtr full(Shape shape, double fill, bool requires_grad = false);
  static TensorPtr from_values(Shape shape, std::vector<double> values,
                               bool requires_grad = false);

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  bool is_leaf() const { return parents.empty(); }
  int last_dim() const { return shape.back(); }
  std::int64_t rows() const;  // product of all but the last dim
  double item() const;        // scalar tensors only
  void ensure_grad();
  void zero_grad();
};

// Topologically ordered record of the operations reachable from a root:
// parents always precede children, each node appears exactly once.
struct Graph {
  std::vector<Tensor*> nodes;
  static Graph trace(const TensorPtr& root);
};

enum class FreeGraph { No, Yes };

// Reverse-mode sweep from a scalar loss. Interior gradient buffers are fresh
// per call; leaf gradients accumulate across calls until zero_grad().
// FreeGraph::Yes releases interior values and closures as soon as they have
// been consumed, which roughly halves peak memory during training.
void backward(const TensorPtr& loss, FreeGraph free_graph = FreeGraph::No);

// Scoped switch that stops ops from recording the graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- operations ----
//
// matmul accepts [m,k]x[k,p], [b,m,k]x[k,p] (shared right operand) and
// [b,m,k]x[b,k,p]. Everything else is a shape error.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr matmul_scaled(const TensorPtr& a, const TensorPtr& b, double factor);
TensorPtr transpose_last2(const TensorPtr& a);

// add: identical shapes, or b a vector broadcast across rows.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);  // elementwise
TensorPtr scale(const TensorPtr& a, double factor);
TensorPtr tanh(const TensorPtr& a);

// Softmax over the last axis, computed with max subtraction.
TensorPtr softmax_rows(const TensorPtr& a);

// Per-row standardization over the last axis followed by gain/bias.
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, double eps);

TensorPtr reshape(const TensorPtr& a, Shape shape);
TensorPtr concat_last(const std::vector<TensorPtr>& parts);

// out[i] = mask[i] != 0 ? when_one[i] : when_zero[i]. The gradient is a
// pass-through on the selected side and zero on the other, which makes it
// the differentiable index-select used to rebuild a stage-2 input.
TensorPtr select_by_mask(const TensorPtr& mask, const TensorPtr& when_one,
                         const TensorPtr& when_zero);

TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);

enum class LossKernel { SquaredError, AbsoluteError };

// mean over all elements of weight[i] * kernel(pred[i] - target[i]).
// target and weight are treated as constants.
TensorPtr weighted_mean_loss(const TensorPtr& pred, const TensorPtr& target,
                             const TensorPtr& weight,
                             LossKernel kernel = LossKernel::SquaredError);

}  // namespace eegc::ag
