#include "eegc/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace eegc::ag {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

thread_local int g_no_grad_depth = 0;

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Shared construction path for op results: parents and the backward closure
// are recorded only when some parent needs gradients and grad mode is on.
TensorPtr make_node(Shape shape, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backward) {
  auto t = Tensor::leaf(std::move(shape), false);
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
      t->requires_grad = true;
      t->parents = std::move(parents);
      t->backward_fn = std::move(backward);
    }
  }
  return t;
}

// Leading batch extent for rank-3 tensors, 1 otherwise.
std::int64_t batch_of(const Tensor& t) {
  return t.shape.size() == 3 ? t.shape[0] : 1;
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
    n *= d;
  }
  return n;
}

TensorPtr Tensor::leaf(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  const auto n = numel(shape);
  t->shape = std::move(shape);
  t->value.assign(static_cast<size_t>(n), 0.0);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto t = leaf(std::move(shape), requires_grad);
  std::fill(t->value.begin(), t->value.end(), fill);
  return t;
}

TensorPtr Tensor::from_values(Shape shape, std::vector<double> values,
                              bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor: value count does not match shape");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

std::int64_t Tensor::rows() const {
  return size() / shape.back();
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar");
  return value[0];
}

void Tensor::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

Graph Graph::trace(const TensorPtr& root) {
  Graph g;
  std::unordered_set<Tensor*> seen;
  // iterative post-order DFS; parents end up before children
  std::vector<std::pair<Tensor*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      g.nodes.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void backward(const TensorPtr& loss, FreeGraph free_graph) {
  if (!loss || loss->size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  Graph g = Graph::trace(loss);
  // interior gradients are per-call scratch; leaf gradients accumulate
  for (Tensor* n : g.nodes) {
    if (!n->is_leaf())
      n->grad.assign(n->value.size(), 0.0);
    else if (n->requires_grad)
      n->ensure_grad();
  }
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
    Tensor* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
    if (free_graph == FreeGraph::Yes && !n->is_leaf()) {
      n->value.clear();
      n->value.shrink_to_fit();
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->backward_fn = nullptr;
    }
  }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---------------------------------------------------------------------------
// matmul family

namespace {

TensorPtr matmul_impl(const TensorPtr& a, const TensorPtr& b, double factor) {
  const auto ra = a->shape.size();
  const auto rb = b->shape.size();
  check(ra >= 2 && ra <= 3 && rb >= 2 && rb <= 3, "matmul: rank must be 2 or 3");

  const int k = a->shape.back();
  const int m = a->shape[ra - 2];
  check(b->shape[rb - 2] == k, "matmul: inner dimensions disagree");
  const int p = b->shape.back();

  if (rb == 2) {
    // shared right operand: flatten every leading dim of a into rows
    const std::int64_t rows = a->rows();
    Shape out_shape = a->shape;
    out_shape.back() = p;
    auto out = make_node(out_shape, {a, b}, [factor](Tensor& self) {
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      const std::int64_t rows = pa->rows();
      const int k = pa->shape.back();
      const int p = pb->shape.back();
      CMap dC(self.grad.data(), rows, p);
      CMap A(pa->value.data(), rows, k);
      CMap B(pb->value.data(), k, p);
      if (pa->requires_grad) {
        pa->ensure_grad();
        Map dA(pa->grad.data(), rows, k);
        dA.noalias() += factor * (dC * B.transpose());
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        Map dB(pb->grad.data(), k, p);
        dB.noalias() += factor * (A.transpose() * dC);
      }
    });
    CMap A(a->value.data(), rows, k);
    CMap B(b->value.data(), k, p);
    Map C(out->value.data(), rows, p);
    if (factor == 1.0)
      C.noalias() = A * B;
    else
      C.noalias() = factor * (A * B);
    return out;
  }

  // batched x batched
  check(ra == 3 && rb == 3, "matmul: 2D x 3D is not supported");
  check(a->shape[0] == b->shape[0], "matmul: batch sizes disagree");
  const std::int64_t batch = a->shape[0];
  Shape out_shape{static_cast<int>(batch), m, p};
  auto out = make_node(out_shape, {a, b}, [factor, m, k, p](Tensor& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const std::int64_t batch = self.shape[0];
    const bool ga = pa->requires_grad;
    const bool gb = pb->requires_grad;
    if (ga) pa->ensure_grad();
    if (gb) pb->ensure_grad();
    for (std::int64_t i = 0; i < batch; ++i) {
      CMap dC(self.grad.data() + i * m * p, m, p);
      CMap A(pa->value.data() + i * m * k, m, k);
      CMap B(pb->value.data() + i * k * p, k, p);
      if (ga) {
        Map dA(pa->grad.data() + i * m * k, m, k);
        dA.noalias() += factor * (dC * B.transpose());
      }
      if (gb) {
        Map dB(pb->grad.data() + i * k * p, k, p);
        dB.noalias() += factor * (A.transpose() * dC);
      }
    }
  });
  for (std::int64_t i = 0; i < batch; ++i) {
    CMap A(a->value.data() + i * m * k, m, k);
    CMap B(b->value.data() + i * k * p, k, p);
    Map C(out->value.data() + i * m * p, m, p);
    if (factor == 1.0)
      C.noalias() = A * B;
    else
      C.noalias() = factor * (A * B);
  }
  return out;
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  return matmul_impl(a, b, 1.0);
}

TensorPtr matmul_scaled(const TensorPtr& a, const TensorPtr& b, double factor) {
  return matmul_impl(a, b, factor);
}

TensorPtr transpose_last2(const TensorPtr& a) {
  const auto r = a->shape.size();
  check(r >= 2 && r <= 3, "transpose_last2: rank must be 2 or 3");
  const int m = a->shape[r - 2];
  const int n = a->shape.back();
  const std::int64_t batch = batch_of(*a);
  Shape out_shape = a->shape;
  out_shape[r - 2] = n;
  out_shape.back() = m;
  auto out = make_node(out_shape, {a}, [m, n](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const std::int64_t batch = batch_of(*pa);
    for (std::int64_t i = 0; i < batch; ++i) {
      const double* dC = self.grad.data() + i * m * n;
      double* dA = pa->grad.data() + i * m * n;
      for (int r0 = 0; r0 < m; ++r0)
        for (int c0 = 0; c0 < n; ++c0) dA[r0 * n + c0] += dC[c0 * m + r0];
    }
  });
  for (std::int64_t i = 0; i < batch; ++i) {
    const double* src = a->value.data() + i * m * n;
    double* dst = out->value.data() + i * m * n;
    for (int r0 = 0; r0 < m; ++r0)
      for (int c0 = 0; c0 < n; ++c0) dst[c0 * m + r0] = src[r0 * n + c0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape == b->shape) {
    auto out = make_node(a->shape, {a, b}, [](Tensor& self) {
      for (int side = 0; side < 2; ++side) {
        const auto& p = self.parents[static_cast<size_t>(side)];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    });
    for (size_t i = 0; i < out->value.size(); ++i)
      out->value[i] = a->value[i] + b->value[i];
    return out;
  }
  // row-vector broadcast
  check(b->shape.size() == 1 && b->shape[0] == a->last_dim(),
        "add: shapes must match or b must be a last-dim vector");
  const int d = b->shape[0];
  auto out = make_node(a->shape, {a, b}, [d](Tensor& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      const std::int64_t rows = self.rows();
      for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j)
          pb->grad[static_cast<size_t>(j)] +=
              self.grad[static_cast<size_t>(r * d + j)];
    }
  });
  const std::int64_t rows = a->rows();
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j)
      out->value[static_cast<size_t>(r * d + j)] =
          a->value[static_cast<size_t>(r * d + j)] +
          b->value[static_cast<size_t>(j)];
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check(a->shape == b->shape, "sub: shape mismatch");
  auto out = make_node(a->shape, {a, b}, [](Tensor& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a->value[i] - b->value[i];
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check(a->shape == b->shape, "mul: shape mismatch");
  auto out = make_node(a->shape, {a, b}, [](Tensor& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a->value[i] * b->value[i];
  return out;
}

TensorPtr scale(const TensorPtr& a, double factor) {
  auto out = make_node(a->shape, {a}, [factor](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] += factor * self.grad[i];
  });
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = factor * a->value[i];
  return out;
}

TensorPtr tanh(const TensorPtr& a) {
  auto out = make_node(a->shape, {a}, [](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      pa->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = std::tanh(a->value[i]);
  return out;
}

TensorPtr softmax_rows(const TensorPtr& a) {
  const int d = a->last_dim();
  auto out = make_node(a->shape, {a}, [d](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const std::int64_t rows = self.rows();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* dy = self.grad.data() + r * d;
      double* dx = pa->grad.data() + r * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (int j = 0; j < d; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
  const std::int64_t rows = a->rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = a->value.data() + r * d;
    double* y = out->value.data() + r * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < d; ++j) y[j] *= inv;
  }
  return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, double eps) {
  const int d = x->last_dim();
  check(d >= 1, "layer_norm: empty rows");
  check(gain->shape == Shape{d} && bias->shape == Shape{d},
        "layer_norm: gain/bias must be vectors of the last dim");
  check(eps > 0.0, "layer_norm: eps must be positive");

  const std::int64_t rows = x->rows();
  // standardized rows and per-row 1/sigma, shared with the backward pass
  auto normalized = std::make_shared<std::vector<double>>(x->value.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(
      static_cast<size_t>(rows));

  auto out = make_node(x->shape, {x, gain, bias},
                       [d, normalized, inv_sigma](Tensor& self) {
    const auto& px = self.parents[0];
    const auto& pg = self.parents[1];
    const auto& pb = self.parents[2];
    const std::int64_t rows = self.rows();
    const double inv_d = 1.0 / d;
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* dy = self.grad.data() + r * d;
      const double* y = normalized->data() + r * d;
      const double is = (*inv_sigma)[static_cast<size_t>(r)];
      if (pg->requires_grad)
        for (int j = 0; j < d; ++j)
          pg->grad[static_cast<size_t>(j)] += dy[j] * y[j];
      if (pb->requires_grad)
        for (int j = 0; j < d; ++j) pb->grad[static_cast<size_t>(j)] += dy[j];
      if (px->requires_grad) {
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double h = dy[j] * pg->value[static_cast<size_t>(j)];
          m1 += h;
          m2 += h * y[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        double* dx = px->grad.data() + r * d;
        for (int j = 0; j < d; ++j) {
          const double h = dy[j] * pg->value[static_cast<size_t>(j)];
          dx[j] += is * (h - m1 - y[j] * m2);
        }
      }
    }
  });

  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = x->value.data() + r * d;
    double* y = normalized->data() + r * d;
    double* o = out->value.data() + r * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += in[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = in[j] - mean;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = is;
    for (int j = 0; j < d; ++j) {
      y[j] = (in[j] - mean) * is;
      o[j] = y[j] * gain->value[static_cast<size_t>(j)] +
             bias->value[static_cast<size_t>(j)];
    }
  }
  return out;
}

TensorPtr reshape(const TensorPtr& a, Shape shape) {
  check(numel(shape) == a->size(), "reshape: element count mismatch");
  auto out = make_node(std::move(shape), {a}, [](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
  out->value = a->value;
  return out;
}

TensorPtr concat_last(const std::vector<TensorPtr>& parts) {
  check(!parts.empty(), "concat_last: no inputs");
  Shape lead = parts[0]->shape;
  lead.pop_back();
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    Shape l = p->shape;
    const int w = l.back();
    l.pop_back();
    check(l == lead, "concat_last: leading dimensions disagree");
    widths.push_back(w);
    total += w;
  }
  Shape out_shape = parts[0]->shape;
  out_shape.back() = total;

  std::vector<TensorPtr> parents(parts.begin(), parts.end());
  auto out = make_node(out_shape, std::move(parents),
                       [widths, total](Tensor& self) {
    const std::int64_t rows = self.rows();
    int off = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      const auto& p = self.parents[k];
      const int w = widths[k];
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * total + off;
          double* dst = p->grad.data() + r * w;
          for (int j = 0; j < w; ++j) dst[j] += dy[j];
        }
      }
      off += w;
    }
  });
  const std::int64_t rows = out->rows();
  int off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const int w = widths[k];
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* src = parts[k]->value.data() + r * w;
      double* dst = out->value.data() + r * total + off;
      for (int j = 0; j < w; ++j) dst[j] = src[j];
    }
    off += w;
  }
  return out;
}

TensorPtr select_by_mask(const TensorPtr& mask, const TensorPtr& when_one,
                         const TensorPtr& when_zero) {
  check(mask->shape == when_one->shape && mask->shape == when_zero->shape,
        "select_by_mask: shape mismatch");
  check(!mask->requires_grad, "select_by_mask: mask must be constant");
  auto out = make_node(mask->shape, {mask, when_one, when_zero},
                       [](Tensor& self) {
    const auto& pm = self.parents[0];
    const auto& pa = self.parents[1];
    const auto& pb = self.parents[2];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (pm->value[i] != 0.0) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (pm->value[i] == 0.0) pb->grad[i] += self.grad[i];
    }
  });
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] =
        mask->value[i] != 0.0 ? when_one->value[i] : when_zero->value[i];
  return out;
}

TensorPtr sum_all(const TensorPtr& a) {
  auto out = make_node(Shape{1}, {a}, [](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self.grad[0];
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
  });
  double acc = 0.0;
  for (double v : a->value) acc += v;
  out->value[0] = acc;
  return out;
}

TensorPtr mean_all(const TensorPtr& a) {
  const double inv_n = 1.0 / static_cast<double>(a->size());
  auto out = make_node(Shape{1}, {a}, [inv_n](Tensor& self) {
    const auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self.grad[0] * inv_n;
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
  });
  double acc = 0.0;
  for (double v : a->value) acc += v;
  out->value[0] = acc * inv_n;
  return out;
}

TensorPtr weighted_mean_loss(const TensorPtr& pred, const TensorPtr& target,
                             const TensorPtr& weight, LossKernel kernel) {
  check(pred->shape == target->shape && pred->shape == weight->shape,
        "weighted_mean_loss: shape mismatch");
  check(!weight->requires_grad, "weighted_mean_loss: weight must be constant");
  const double inv_n = 1.0 / static_cast<double>(pred->size());

  auto out = make_node(Shape{1}, {pred, target, weight},
                       [kernel, inv_n](Tensor& self) {
    const auto& pp = self.parents[0];
    const auto& pt = self.parents[1];
    const auto& pw = self.parents[2];
    const double g = self.grad[0] * inv_n;
    const bool gp = pp->requires_grad;
    const bool gt = pt->requires_grad;
    if (gp) pp->ensure_grad();
    if (gt) pt->ensure_grad();
    for (size_t i = 0; i < pp->value.size(); ++i) {
      const double e = pp->value[i] - pt->value[i];
      double de;
      if (kernel == LossKernel::SquaredError)
        de = 2.0 * e;
      else
        de = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      const double contrib = g * pw->value[i] * de;
      if (gp) pp->grad[i] += contrib;
      if (gt) pt->grad[i] -= contrib;
    }
  });

  double acc = 0.0;
  for (size_t i = 0; i < pred->value.size(); ++i) {
    const double e = pred->value[i] - target->value[i];
    const double k =
        kernel == LossKernel::SquaredError ? e * e : std::abs(e);
    acc += weight->value[i] * k;
  }
  out->value[0] = acc * inv_n;
  return out;
}

}  // namespace eegc::ag
