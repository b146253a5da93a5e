#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "olens/error.hpp"
#include "olens/rng.hpp"

// Reverse-mode autograd over dense row-major tensors. Ops record onto a
// thread-local active tape; without one they are plain forward computations.
// Real is float for training and double for gradient verification.

namespace olens {

enum class Mode { Train, Eval };

template <class Real>
struct TensorNode {
  std::vector<int> shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // allocated on first use
  bool requires_grad = false;
  bool tape_output = false;

  std::size_t numel() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

template <class Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), Real(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, Real v, bool requires_grad = false) {
    check_shape(shape);
    auto n = std::make_shared<TensorNode<Real>>();
    n->values.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<int> shape, std::vector<Real> values,
                     bool requires_grad = false) {
    check_shape(shape);
    if (shape_numel(shape) != values.size())
      raise(ErrorKind::Shape, "tensor: " + shape_str(shape) + " cannot hold " +
                                  std::to_string(values.size()) + " values");
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(Real v) { return from({1}, {v}); }

  bool valid() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const {
    if (i < 0 || i >= rank())
      raise(ErrorKind::Shape, "dim: axis " + std::to_string(i) + " outside rank " +
                                  std::to_string(rank()));
    return node_->shape[static_cast<std::size_t>(i)];
  }
  std::size_t numel() const { return node_->numel(); }

  std::span<const Real> values() const { return node_->values; }
  std::span<Real> mutable_values() { return node_->values; }
  std::span<const Real> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  Real item() const {
    if (numel() != 1) raise(ErrorKind::Contract, "item: tensor is not scalar");
    return node_->values[0];
  }

  Real at(int i) const { return node_->values[static_cast<std::size_t>(i)]; }
  Real at(int r, int c) const {
    return node_->values[static_cast<std::size_t>(r) * dim(1) + c];
  }

  const std::shared_ptr<TensorNode<Real>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<Real>> n) : node_(std::move(n)) {}
  static void check_shape(const std::vector<int>& shape) {
    if (shape.empty()) raise(ErrorKind::Shape, "tensor: empty shape");
    for (int d : shape)
      if (d <= 0) raise(ErrorKind::Shape, "tensor: non-positive dim in " + shape_str(shape));
  }

  template <class R>
  friend Tensor<R> make_tensor(std::vector<int>, std::vector<R>);

  std::shared_ptr<TensorNode<Real>> node_;
};

template <class Real>
Tensor<Real> make_tensor(std::vector<int> shape, std::vector<Real> values) {
  return Tensor<Real>::from(std::move(shape), std::move(values));
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <class Real>
class Tape {
 public:
  struct Record {
    const char* op;
    std::vector<std::shared_ptr<TensorNode<Real>>> inputs;
    std::shared_ptr<TensorNode<Real>> output;
    std::function<void()> backward;
  };

  void add(Record r) {
    r.output->tape_output = true;
    records_.push_back(std::move(r));
  }

  std::size_t size() const { return records_.size(); }
  const Record& record(std::size_t i) const { return records_[i]; }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = seed and replays the records in reverse creation
  // order exactly once. Leaf gradients accumulate across calls; intermediate
  // gradients are reset first so each call contributes exactly one seed's worth.
  void backward(const Tensor<Real>& loss, Real seed = Real(1)) {
    if (loss.numel() != 1) raise(ErrorKind::Contract, "backward: loss must be scalar");
    bool owned = false;
    for (const auto& r : records_)
      if (r.output == loss.node()) owned = true;
    if (!owned)
      raise(ErrorKind::Contract, "backward: loss was not produced under this tape");
    for (const auto& r : records_) {
      if (!r.output->grad.empty())
        std::fill(r.output->grad.begin(), r.output->grad.end(), Real(0));
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] = seed;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // not on the path to the loss
      it->backward();
    }
  }

 private:
  std::vector<Record> records_;
};

namespace detail {
template <class Real>
inline Tape<Real>*& active_tape_slot() {
  thread_local Tape<Real>* tape = nullptr;
  return tape;
}
}  // namespace detail

template <class Real>
Tape<Real>* active_tape() {
  return detail::active_tape_slot<Real>();
}

template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& t) : prev_(detail::active_tape_slot<Real>()) {
    detail::active_tape_slot<Real>() = &t;
  }
  ~TapeScope() { detail::active_tape_slot<Real>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* prev_;
};

// Free-function form: uses the active tape.
template <class Real>
void backward(const Tensor<Real>& loss, Real seed = Real(1)) {
  Tape<Real>* t = active_tape<Real>();
  if (!t) raise(ErrorKind::Contract, "backward: no active tape");
  t->backward(loss, seed);
}

namespace detail {

template <class Real>
bool on_grad_path(const Tensor<Real>& t) {
  return t.node()->requires_grad || t.node()->tape_output;
}

template <class Real, class... Ts>
bool should_record(const Ts&... inputs) {
  if (!active_tape<Real>()) return false;
  return (on_grad_path(inputs) || ...);
}

template <class Real>
void record(const char* op, std::vector<std::shared_ptr<TensorNode<Real>>> inputs,
            const Tensor<Real>& out, std::function<void()> bw) {
  active_tape<Real>()->add(
      {op, std::move(inputs), out.node(), std::move(bw)});
}

// --- raw kernels -----------------------------------------------------------

// C(m x n) (+)= A(m x k) * B(k x n)
template <class Real>
void gemm_nn(int m, int n, int k, const Real* a, const Real* b, Real* c, bool acc) {
  if (!acc) std::fill(c, c + static_cast<std::size_t>(m) * n, Real(0));
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    Real* crow = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      Real av = arow[kk];
      const Real* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x n) (+)= A(m x k) * B(n x k)^T
template <class Real>
void gemm_nt(int m, int n, int k, const Real* a, const Real* b, Real* c, bool acc) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    Real* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Real* brow = b + static_cast<std::size_t>(j) * k;
      Real s = 0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

// C(m x n) (+)= A(k x m)^T * B(k x n)
template <class Real>
void gemm_tn(int m, int n, int k, const Real* a, const Real* b, Real* c, bool acc) {
  if (!acc) std::fill(c, c + static_cast<std::size_t>(m) * n, Real(0));
  for (int kk = 0; kk < k; ++kk) {
    const Real* arow = a + static_cast<std::size_t>(kk) * m;
    const Real* brow = b + static_cast<std::size_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      Real av = arow[i];
      Real* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class Real>
void require_rank(const Tensor<Real>& t, int rank, const char* op) {
  if (t.rank() != rank)
    raise(ErrorKind::Shape, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    raise(ErrorKind::Shape,
          "matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  auto out = Tensor<Real>::zeros({m, n});
  detail::gemm_nn(m, n, k, a.values().data(), b.values().data(),
                  out.mutable_values().data(), false);
  if (detail::should_record<Real>(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record<Real>("matmul", {an, bn}, out, [an, bn, on, m, n, k]() {
      if (an->requires_grad || an->tape_output) {
        an->ensure_grad();
        detail::gemm_nt(m, k, n, on->grad.data(), bn->values.data(), an->grad.data(), true);
      }
      if (bn->requires_grad || bn->tape_output) {
        bn->ensure_grad();
        detail::gemm_tn(k, n, m, an->values.data(), on->grad.data(), bn->grad.data(), true);
      }
    });
  }
  return out;
}

// a * b^T; used for attention scores.
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    raise(ErrorKind::Shape,
          "matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  auto out = Tensor<Real>::zeros({m, n});
  detail::gemm_nt(m, n, k, a.values().data(), b.values().data(),
                  out.mutable_values().data(), false);
  if (detail::should_record<Real>(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record<Real>("matmul_nt", {an, bn}, out, [an, bn, on, m, n, k]() {
      if (an->requires_grad || an->tape_output) {
        an->ensure_grad();
        detail::gemm_nn(m, k, n, on->grad.data(), bn->values.data(), an->grad.data(), true);
      }
      if (bn->requires_grad || bn->tape_output) {
        bn->ensure_grad();
        detail::gemm_tn(n, k, m, on->grad.data(), an->values.data(), bn->grad.data(), true);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    raise(ErrorKind::Shape,
          "add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = Tensor<Real>::zeros(a.shape());
  auto* o = out.mutable_values().data();
  const auto* x = a.values().data();
  const auto* y = b.values().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = x[i] + y[i];
  if (detail::should_record<Real>(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record<Real>("add", {an, bn}, out, [an, bn, on]() {
      for (auto* n : {an.get(), bn.get()}) {
        if (n->requires_grad || n->tape_output) {
          n->ensure_grad();
          for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += on->grad[i];
        }
      }
    });
  }
  return out;
}

// x: (n x c), bias: (c); adds bias to every row.
template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  detail::require_rank(x, 2, "add_bias");
  detail::require_rank(bias, 1, "add_bias");
  const int n = x.dim(0), c = x.dim(1);
  if (bias.dim(0) != c)
    raise(ErrorKind::Shape, "add_bias: bias " + shape_str(bias.shape()) +
                                " does not match columns of " + shape_str(x.shape()));
  auto out = Tensor<Real>::zeros(x.shape());
  auto* o = out.mutable_values().data();
  const auto* xv = x.values().data();
  const auto* bv = bias.values().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      o[static_cast<std::size_t>(i) * c + j] = xv[static_cast<std::size_t>(i) * c + j] + bv[j];
  if (detail::should_record<Real>(x, bias)) {
    auto xn = x.node(), bn = bias.node(), on = out.node();
    detail::record<Real>("add_bias", {xn, bn}, out, [xn, bn, on, n, c]() {
      if (xn->requires_grad || xn->tape_output) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad || bn->tape_output) {
        bn->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j)
            bn->grad[static_cast<std::size_t>(j)] += on->grad[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c) {
  auto out = Tensor<Real>::zeros(x.shape());
  auto* o = out.mutable_values().data();
  const auto* xv = x.values().data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = xv[i] * c;
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("scale", {xn}, out, [xn, on, c]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    raise(ErrorKind::Shape,
          "mul: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = Tensor<Real>::zeros(a.shape());
  auto* o = out.mutable_values().data();
  const auto* x = a.values().data();
  const auto* y = b.values().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = x[i] * y[i];
  if (detail::should_record<Real>(a, b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record<Real>("mul", {an, bn}, out, [an, bn, on]() {
      if (an->requires_grad || an->tape_output) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->values[i];
      }
      if (bn->requires_grad || bn->tape_output) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->values[i];
      }
    });
  }
  return out;
}

namespace detail {

// softmax along contiguous rows of length `width`, `rows` of them.
template <class Real>
void softmax_rows(const Real* x, Real* y, int rows, int width) {
  for (int r = 0; r < rows; ++r) {
    const Real* xs = x + static_cast<std::size_t>(r) * width;
    Real* ys = y + static_cast<std::size_t>(r) * width;
    Real mx = xs[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, xs[j]);
    Real sum = 0;
    for (int j = 0; j < width; ++j) {
      ys[j] = std::exp(xs[j] - mx);
      sum += ys[j];
    }
    Real inv = Real(1) / sum;
    for (int j = 0; j < width; ++j) ys[j] *= inv;
  }
}

}  // namespace detail

// Softmax along `axis`. Rank-1 tensors use axis 0 (or -1); rank-2 support
// axis 1/-1 (rows) and axis 0 (columns).
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis = -1) {
  const int rk = x.rank();
  if (axis < 0) axis += rk;
  if (axis < 0 || axis >= rk)
    raise(ErrorKind::Shape, "softmax: invalid axis for " + shape_str(x.shape()));
  auto out = Tensor<Real>::zeros(x.shape());
  const bool column_wise = (rk == 2 && axis == 0);
  if (!column_wise) {
    int width = x.dim(rk - 1);
    int rows = static_cast<int>(x.numel()) / width;
    detail::softmax_rows(x.values().data(), out.mutable_values().data(), rows, width);
  } else {
    const int n = x.dim(0), c = x.dim(1);
    const auto* xv = x.values().data();
    auto* yv = out.mutable_values().data();
    for (int j = 0; j < c; ++j) {
      Real mx = xv[j];
      for (int i = 1; i < n; ++i) mx = std::max(mx, xv[static_cast<std::size_t>(i) * c + j]);
      Real sum = 0;
      for (int i = 0; i < n; ++i) {
        Real e = std::exp(xv[static_cast<std::size_t>(i) * c + j] - mx);
        yv[static_cast<std::size_t>(i) * c + j] = e;
        sum += e;
      }
      for (int i = 0; i < n; ++i) yv[static_cast<std::size_t>(i) * c + j] /= sum;
    }
  }
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("softmax", {xn}, out, [xn, on, column_wise]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      const auto& shape = on->shape;
      if (!column_wise) {
        int width = shape.back();
        int rows = static_cast<int>(on->numel()) / width;
        for (int r = 0; r < rows; ++r) {
          const Real* y = on->values.data() + static_cast<std::size_t>(r) * width;
          const Real* dy = on->grad.data() + static_cast<std::size_t>(r) * width;
          Real* dx = xn->grad.data() + static_cast<std::size_t>(r) * width;
          Real dot = 0;
          for (int j = 0; j < width; ++j) dot += dy[j] * y[j];
          for (int j = 0; j < width; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
      } else {
        const int n = shape[0], c = shape[1];
        for (int j = 0; j < c; ++j) {
          Real dot = 0;
          for (int i = 0; i < n; ++i) {
            std::size_t k = static_cast<std::size_t>(i) * c + j;
            dot += on->grad[k] * on->values[k];
          }
          for (int i = 0; i < n; ++i) {
            std::size_t k = static_cast<std::size_t>(i) * c + j;
            xn->grad[k] += on->values[k] * (on->grad[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// per-feature affine (gain, bias).
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps = Real(1e-12)) {
  if (eps <= 0) raise(ErrorKind::Value, "layer_norm: eps must be positive");
  const int h = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != h || bias.dim(0) != h)
    raise(ErrorKind::Shape, "layer_norm: gain/bias must have shape [" + std::to_string(h) + "]");
  const int rows = static_cast<int>(x.numel()) / h;
  auto out = Tensor<Real>::zeros(x.shape());
  // x_hat is saved for backward.
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<Real>>(rows);
  const auto* xv = x.values().data();
  const auto* gv = gain.values().data();
  const auto* bv = bias.values().data();
  auto* ov = out.mutable_values().data();
  for (int r = 0; r < rows; ++r) {
    const Real* xs = xv + static_cast<std::size_t>(r) * h;
    Real* os = ov + static_cast<std::size_t>(r) * h;
    Real* hs = xhat->data() + static_cast<std::size_t>(r) * h;
    Real mean = 0;
    for (int j = 0; j < h; ++j) mean += xs[j];
    mean /= h;
    Real var = 0;
    for (int j = 0; j < h; ++j) {
      Real d = xs[j] - mean;
      var += d * d;
    }
    var /= h;
    Real inv = Real(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (int j = 0; j < h; ++j) {
      hs[j] = (xs[j] - mean) * inv;
      os[j] = hs[j] * gv[j] + bv[j];
    }
  }
  if (detail::should_record<Real>(x, gain, bias)) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    detail::record<Real>("layer_norm", {xn, gn, bn}, out,
                         [xn, gn, bn, on, xhat, inv_sigma, rows, h]() {
      const auto* dy = on->grad.data();
      if (gn->requires_grad || gn->tape_output) {
        gn->ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < h; ++j)
            gn->grad[j] += dy[static_cast<std::size_t>(r) * h + j] *
                           (*xhat)[static_cast<std::size_t>(r) * h + j];
      }
      if (bn->requires_grad || bn->tape_output) {
        bn->ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < h; ++j) bn->grad[j] += dy[static_cast<std::size_t>(r) * h + j];
      }
      if (xn->requires_grad || xn->tape_output) {
        xn->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const Real* dys = dy + static_cast<std::size_t>(r) * h;
          const Real* hs = xhat->data() + static_cast<std::size_t>(r) * h;
          Real* dx = xn->grad.data() + static_cast<std::size_t>(r) * h;
          Real inv = (*inv_sigma)[r];
          Real m1 = 0, m2 = 0;  // mean(g*dy), mean(g*dy*xhat)
          for (int j = 0; j < h; ++j) {
            Real gdy = gn->values[static_cast<std::size_t>(j)] * dys[j];
            m1 += gdy;
            m2 += gdy * hs[j];
          }
          m1 /= h;
          m2 /= h;
          for (int j = 0; j < h; ++j) {
            Real gdy = gn->values[static_cast<std::size_t>(j)] * dys[j];
            dx[j] += (gdy - m1 - hs[j] * m2) * inv;
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

template <class Real, class F, class DF>
Tensor<Real> unary_elementwise(const char* name, const Tensor<Real>& x, F f, DF df) {
  auto out = Tensor<Real>::zeros(x.shape());
  auto* o = out.mutable_values().data();
  const auto* xv = x.values().data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = f(xv[i]);
  if (should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    record<Real>(name, {xn}, out, [xn, on, df]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i)
        xn->grad[i] += on->grad[i] * df(xn->values[i], on->values[i]);
    });
  }
  return out;
}

}  // namespace detail

// GELU, tanh approximation.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  const Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  const Real a = Real(0.044715);
  return detail::unary_elementwise(
      "gelu", x,
      [c, a](Real v) {
        Real u = c * (v + a * v * v * v);
        return Real(0.5) * v * (Real(1) + std::tanh(u));
      },
      [c, a](Real v, Real) {
        Real u = c * (v + a * v * v * v);
        Real t = std::tanh(u);
        Real du = c * (Real(1) + Real(3) * a * v * v);
        return Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
      });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return detail::unary_elementwise(
      "tanh", x, [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary_elementwise(
      "sigmoid", x,
      [](Real v) {
        if (v >= 0) {
          Real e = std::exp(-v);
          return Real(1) / (Real(1) + e);
        }
        Real e = std::exp(v);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

// Zeroes each element with probability p in train mode, scaling survivors by
// 1/(1-p). Eval mode and p == 0 return the input tensor untouched.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, Mode mode, RngStream& rng) {
  if (p < 0.0 || p >= 1.0)
    raise(ErrorKind::Value, "dropout: p must be in [0,1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return x;
  const Real inv = Real(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i)
    (*mask)[i] = rng.next_double() < p ? Real(0) : inv;
  auto out = Tensor<Real>::zeros(x.shape());
  auto* o = out.mutable_values().data();
  const auto* xv = x.values().data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = xv[i] * (*mask)[i];
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("dropout", {xn}, out, [xn, on, mask]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i)
        xn->grad[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// Mean negative log-softmax at the target index over rows whose target is not
// ignore_index. logits: (n x c).
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<int>& targets,
                           int ignore_index = -1) {
  detail::require_rank(logits, 2, "cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    raise(ErrorKind::Shape, "cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  int kept = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= c)
      raise(ErrorKind::Value, "cross_entropy: target " + std::to_string(t) +
                                  " outside [0," + std::to_string(c) + ")");
    ++kept;
  }
  if (kept == 0) raise(ErrorKind::Contract, "cross_entropy: no rows to score");
  const auto* lv = logits.values().data();
  Real total = 0;
  auto lse = std::make_shared<std::vector<Real>>(n);
  for (int i = 0; i < n; ++i) {
    if (targets[static_cast<std::size_t>(i)] == ignore_index) continue;
    const Real* row = lv + static_cast<std::size_t>(i) * c;
    Real mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    Real sum = 0;
    for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    Real l = mx + std::log(sum);
    (*lse)[static_cast<std::size_t>(i)] = l;
    total += l - row[targets[static_cast<std::size_t>(i)]];
  }
  auto out = Tensor<Real>::scalar(total / Real(kept));
  if (detail::should_record<Real>(logits)) {
    auto ln = logits.node(), on = out.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    detail::record<Real>("cross_entropy", {ln}, out,
                         [ln, on, tgt, lse, n, c, kept, ignore_index]() {
      if (!(ln->requires_grad || ln->tape_output)) return;
      ln->ensure_grad();
      const Real g = on->grad[0] / Real(kept);
      for (int i = 0; i < n; ++i) {
        int t = (*tgt)[static_cast<std::size_t>(i)];
        if (t == ignore_index) continue;
        const Real* row = ln->values.data() + static_cast<std::size_t>(i) * c;
        Real* drow = ln->grad.data() + static_cast<std::size_t>(i) * c;
        Real l = (*lse)[static_cast<std::size_t>(i)];
        for (int j = 0; j < c; ++j) {
          Real p = std::exp(row[j] - l);
          drow[j] += g * (p - (j == t ? Real(1) : Real(0)));
        }
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mse(const Tensor<Real>& pred, const Tensor<Real>& target) {
  if (pred.numel() != target.numel())
    raise(ErrorKind::Shape, "mse: length mismatch: " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  const std::size_t n = pred.numel();
  const auto* p = pred.values().data();
  const auto* t = target.values().data();
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Real d = p[i] - t[i];
    total += d * d;
  }
  auto out = Tensor<Real>::scalar(total / Real(n));
  if (detail::should_record<Real>(pred, target)) {
    auto pn = pred.node(), tn = target.node(), on = out.node();
    detail::record<Real>("mse", {pn, tn}, out, [pn, tn, on, n]() {
      const Real g = on->grad[0] * Real(2) / Real(n);
      if (pn->requires_grad || pn->tape_output) {
        pn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) pn->grad[i] += g * (pn->values[i] - tn->values[i]);
      }
      if (tn->requires_grad || tn->tape_output) {
        tn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) tn->grad[i] -= g * (pn->values[i] - tn->values[i]);
      }
    });
  }
  return out;
}

// Concatenation along `axis` (rank-1 axis 0 or rank-2 axis 0/1).
template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis = 0) {
  if (parts.empty()) raise(ErrorKind::Contract, "concat: no inputs");
  const int rk = parts[0].rank();
  if (axis < 0) axis += rk;
  if (axis < 0 || axis >= rk || rk > 2)
    raise(ErrorKind::Shape, "concat: invalid axis " + std::to_string(axis));
  for (const auto& p : parts) {
    if (p.rank() != rk)
      raise(ErrorKind::Shape, "concat: rank mismatch");
    for (int d = 0; d < rk; ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        raise(ErrorKind::Shape, "concat: shapes incompatible: " + shape_str(parts[0].shape()) +
                                    " vs " + shape_str(p.shape()));
  }
  std::vector<int> out_shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) total += p.dim(axis);
  out_shape[static_cast<std::size_t>(axis)] = total;
  auto out = Tensor<Real>::zeros(out_shape);
  auto* ov = out.mutable_values().data();

  if (rk == 1 || axis == 0) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.values().begin(), p.values().end(), ov + off);
      off += p.numel();
    }
  } else {  // rank 2, axis 1
    const int rows = parts[0].dim(0);
    int col_off = 0;
    for (const auto& p : parts) {
      const int c = p.dim(1);
      for (int r = 0; r < rows; ++r)
        std::copy(p.values().begin() + static_cast<std::ptrdiff_t>(r) * c,
                  p.values().begin() + static_cast<std::ptrdiff_t>(r + 1) * c,
                  ov + static_cast<std::size_t>(r) * total + col_off);
      col_off += c;
    }
  }

  bool any = false;
  for (const auto& p : parts) any = any || detail::on_grad_path(p);
  if (active_tape<Real>() && any) {
    std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    detail::record<Real>("concat", nodes, out, [nodes, on, rk, axis, total]() {
      if (rk == 1 || axis == 0) {
        std::size_t off = 0;
        for (auto& nd : nodes) {
          if (nd->requires_grad || nd->tape_output) {
            nd->ensure_grad();
            for (std::size_t i = 0; i < nd->numel(); ++i) nd->grad[i] += on->grad[off + i];
          }
          off += nd->numel();
        }
      } else {
        const int rows = nodes[0]->shape[0];
        int col_off = 0;
        for (auto& nd : nodes) {
          const int c = nd->shape[1];
          if (nd->requires_grad || nd->tape_output) {
            nd->ensure_grad();
            for (int r = 0; r < rows; ++r)
              for (int j = 0; j < c; ++j)
                nd->grad[static_cast<std::size_t>(r) * c + j] +=
                    on->grad[static_cast<std::size_t>(r) * total + col_off + j];
          }
          col_off += c;
        }
      }
    });
  }
  return out;
}

// Gathers rows of a rank-2 tensor; duplicates accumulate on backward.
template <class Real>
Tensor<Real> take_rows(const Tensor<Real>& x, const std::vector<int>& rows) {
  detail::require_rank(x, 2, "take_rows");
  const int n = x.dim(0), c = x.dim(1);
  for (int r : rows)
    if (r < 0 || r >= n)
      raise(ErrorKind::Value, "take_rows: row " + std::to_string(r) + " outside [0," +
                                  std::to_string(n) + ")");
  auto out = Tensor<Real>::zeros({static_cast<int>(rows.size()), c});
  auto* ov = out.mutable_values().data();
  const auto* xv = x.values().data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(xv + static_cast<std::size_t>(rows[i]) * c,
              xv + static_cast<std::size_t>(rows[i] + 1) * c, ov + i * c);
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    auto idx = std::make_shared<std::vector<int>>(rows);
    detail::record<Real>("take_rows", {xn}, out, [xn, on, idx, c]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < idx->size(); ++i)
        for (int j = 0; j < c; ++j)
          xn->grad[static_cast<std::size_t>((*idx)[i]) * c + j] += on->grad[i * c + j];
    });
  }
  return out;
}

// Embedding lookup is a row gather over the table.
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table, const std::vector<int>& ids) {
  return take_rows(table, ids);
}

// Row i of a rank-2 tensor as a rank-1 vector.
template <class Real>
Tensor<Real> row(const Tensor<Real>& x, int i) {
  detail::require_rank(x, 2, "row");
  const int n = x.dim(0), c = x.dim(1);
  if (i < 0 || i >= n)
    raise(ErrorKind::Value, "row: index " + std::to_string(i) + " outside [0," +
                                std::to_string(n) + ")");
  auto out = Tensor<Real>::zeros({c});
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(i) * c,
            x.values().begin() + static_cast<std::ptrdiff_t>(i + 1) * c,
            out.mutable_values().begin());
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("row", {xn}, out, [xn, on, i, c]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (int j = 0; j < c; ++j) xn->grad[static_cast<std::size_t>(i) * c + j] += on->grad[static_cast<std::size_t>(j)];
    });
  }
  return out;
}

// Contiguous column slice [start, start+len) of a rank-2 tensor.
template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, int start, int len) {
  detail::require_rank(x, 2, "slice_cols");
  const int n = x.dim(0), c = x.dim(1);
  if (start < 0 || len <= 0 || start + len > c)
    raise(ErrorKind::Shape, "slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside width " +
                                std::to_string(c));
  auto out = Tensor<Real>::zeros({n, len});
  auto* ov = out.mutable_values().data();
  const auto* xv = x.values().data();
  for (int r = 0; r < n; ++r)
    std::copy(xv + static_cast<std::size_t>(r) * c + start,
              xv + static_cast<std::size_t>(r) * c + start + len,
              ov + static_cast<std::size_t>(r) * len);
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("slice_cols", {xn}, out, [xn, on, start, len, c]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      const int n2 = on->shape[0];
      for (int r = 0; r < n2; ++r)
        for (int j = 0; j < len; ++j)
          xn->grad[static_cast<std::size_t>(r) * c + start + j] +=
              on->grad[static_cast<std::size_t>(r) * len + j];
    });
  }
  return out;
}

// Same data, new shape; element count must match.
template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.numel())
    raise(ErrorKind::Shape, "reshape: " + shape_str(x.shape()) + " -> " +
                                shape_str(new_shape) + " changes element count");
  auto out = Tensor<Real>::from(std::move(new_shape),
                                std::vector<Real>(x.values().begin(), x.values().end()));
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("reshape", {xn}, out, [xn, on]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Zero-pads a rank-2 tensor with extra rows at the bottom.
template <class Real>
Tensor<Real> pad_rows(const Tensor<Real>& x, int total_rows) {
  detail::require_rank(x, 2, "pad_rows");
  const int n = x.dim(0), c = x.dim(1);
  if (total_rows < n)
    raise(ErrorKind::Shape, "pad_rows: target rows " + std::to_string(total_rows) +
                                " smaller than input rows " + std::to_string(n));
  auto out = Tensor<Real>::zeros({total_rows, c});
  std::copy(x.values().begin(), x.values().end(), out.mutable_values().begin());
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("pad_rows", {xn}, out, [xn, on, n, c]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i)
        xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// y = W^T x + b for a rank-1 x; W is (in x out), b is (out).
template <class Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  detail::require_rank(x, 1, "affine");
  detail::require_rank(w, 2, "affine");
  detail::require_rank(b, 1, "affine");
  const int in = w.dim(0), out_dim = w.dim(1);
  if (x.dim(0) != in || b.dim(0) != out_dim)
    raise(ErrorKind::Shape, "affine: x " + shape_str(x.shape()) + ", W " +
                                shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  auto out = Tensor<Real>::zeros({out_dim});
  auto* ov = out.mutable_values().data();
  const auto* xv = x.values().data();
  const auto* wv = w.values().data();
  const auto* bv = b.values().data();
  for (int o = 0; o < out_dim; ++o) ov[o] = bv[o];
  for (int i = 0; i < in; ++i) {
    Real xi = xv[i];
    const Real* wrow = wv + static_cast<std::size_t>(i) * out_dim;
    for (int o = 0; o < out_dim; ++o) ov[o] += xi * wrow[o];
  }
  if (detail::should_record<Real>(x, w, b)) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    detail::record<Real>("affine", {xn, wn, bn}, out, [xn, wn, bn, on, in, out_dim]() {
      const auto* dy = on->grad.data();
      if (xn->requires_grad || xn->tape_output) {
        xn->ensure_grad();
        for (int i = 0; i < in; ++i) {
          Real s = 0;
          const Real* wrow = wn->values.data() + static_cast<std::size_t>(i) * out_dim;
          for (int o = 0; o < out_dim; ++o) s += wrow[o] * dy[o];
          xn->grad[static_cast<std::size_t>(i)] += s;
        }
      }
      if (wn->requires_grad || wn->tape_output) {
        wn->ensure_grad();
        for (int i = 0; i < in; ++i) {
          Real xi = xn->values[static_cast<std::size_t>(i)];
          Real* wrow = wn->grad.data() + static_cast<std::size_t>(i) * out_dim;
          for (int o = 0; o < out_dim; ++o) wrow[o] += xi * dy[o];
        }
      }
      if (bn->requires_grad || bn->tape_output) {
        bn->ensure_grad();
        for (int o = 0; o < out_dim; ++o) bn->grad[static_cast<std::size_t>(o)] += dy[o];
      }
    });
  }
  return out;
}

// Sum of all elements.
template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real total = 0;
  for (Real v : x.values()) total += v;
  auto out = Tensor<Real>::scalar(total);
  if (detail::should_record<Real>(x)) {
    auto xn = x.node(), on = out.node();
    detail::record<Real>("sum", {xn}, out, [xn, on]() {
      if (!(xn->requires_grad || xn->tape_output)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
    });
  }
  return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace olens
