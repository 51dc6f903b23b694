#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cge/error.hpp"
#include "cge/params.hpp"
#include "cge/tensor.hpp"

namespace cge::ad {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Linear record of the forward computation. Nodes are appended in
/// evaluation order, so reverse index order is a valid backward schedule.
/// One tape per thread; tapes are cheap and meant to be discarded after use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  explicit Tape(ParamStore& store) : store_(&store), view_(&store) {}
  /// Forward-only binding: backward() still works but writes no parameter gradients.
  explicit Tape(const ParamStore& store) : view_(&store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, -1, false});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a stored parameter. Binding the same id twice returns the same node.
  Var param(ParamId pid) {
    if (view_ == nullptr) throw ConfigError("tape has no parameter store");
    if (auto it = bound_.find(pid); it != bound_.end()) return {this, it->second};
    nodes_.push_back(Node{view_->value(pid), {}, {}, static_cast<std::ptrdiff_t>(pid), true});
    bound_.emplace(pid, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }
  Var param(const std::string& name) {
    if (view_ == nullptr) throw ConfigError("tape has no parameter store");
    return param(view_->id(name));
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ShapeError("operands recorded on different tapes");
      needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, -1, needs});
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() target with respect to a node.
  const Tensor& grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0 && n.value.size() != 0) {
      zero_cache_ = Tensor(n.value.rows(), n.value.cols());
      return zero_cache_;
    }
    return n.grad;
  }

  /// Mutable gradient buffer of an input node, or nullptr if it needs none.
  Tensor* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
    }
    return &n.grad;
  }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  const ParamStore* store() const noexcept { return view_; }

  /// Reverse sweep from a scalar node. Overwrites the gradient buffers of
  /// every parameter in the bound store; unused parameters end up zero.
  void backward(Var loss) {
    if (loss.tape != this) throw ShapeError("backward target is on a different tape");
    if (nodes_.at(loss.id).value.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " +
                       nodes_[loss.id].value.shape_string());
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (store_ != nullptr) store_->zero_grad();
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)->fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
    if (store_ != nullptr) {
      for (const auto& [pid, node] : bound_) {
        const Tensor& g = nodes_[node].grad;
        if (g.size() == 0) continue;
        auto dst = store_->grad(pid).values();
        auto src = g.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    std::ptrdiff_t param;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, std::size_t> bound_;
  ParamStore* store_ = nullptr;
  const ParamStore* view_ = nullptr;
  mutable Tensor zero_cache_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require(bool cond, const char* op, const Tensor& a, const Tensor& b) {
  if (!cond) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
}

template <class F>
Var unary(Var a, F&& f, std::function<double(double x, double y)> dfdx) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai, dfdx](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dfdx(x[i], y[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    for (std::size_t in : {ai, bi}) {
      if (Tensor* gi = t.grad_buffer(in)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* ga = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::require(a.value().same_shape(b.value()), "mul", a.value(), b.value());
  Tensor out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (Tensor* ga = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  return detail::unary(a, [s](double x) { return s * x; },
                       [s](double, double) { return s; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var log(Var a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log_sigmoid(Var a) {
  return detail::unary(a, detail::log_sigmoid,
                       [](double x, double) { return 1.0 - detail::stable_sigmoid(x); });
}

/// Clips into [lo, hi]; gradient passes only strictly inside the interval.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape

/// (r x k) * (k x c). Also serves as matvec when b is k x 1.
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.rows(), "matmul", av, bv);
  const std::size_t r = av.rows(), k = av.cols(), c = bv.cols();
  Tensor out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av(i, p);
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) out(i, j) += x * bv(p, j);
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi, r, k, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (Tensor* ga = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += g(i, j) * bv(p, j);
          (*ga)(i, p) += s;
        }
    }
    if (Tensor* gb = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av(i, p);
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) (*gb)(p, j) += x * g(i, j);
        }
    }
  });
}

inline Var matvec(Var m, Var x) {
  if (x.cols() != 1) throw ShapeError("matvec: x must be a column, got " + x.value().shape_string());
  return matmul(m, x);
}

/// a * b^T for a (r x k), b (c x k).
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require(av.cols() == bv.cols(), "matmul_nt", av, bv);
  const std::size_t r = av.rows(), k = av.cols(), c = bv.rows();
  Tensor out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const auto ar = av.row_span(i);
    for (std::size_t j = 0; j < c; ++j) {
      const auto br = bv.row_span(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) = s;
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi, r, k, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    Tensor* ga = t.grad_buffer(ai);
    Tensor* gb = t.grad_buffer(bi);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        if (ga) {
          for (std::size_t p = 0; p < k; ++p) (*ga)(i, p) += gij * bv(j, p);
        }
        if (gb) {
          for (std::size_t p = 0; p < k; ++p) (*gb)(j, p) += gij * av(i, p);
        }
      }
    }
  });
}

/// Adds a 1 x c row to every row of a.
inline Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  detail::require(bv.rows() == 1 && bv.cols() == av.cols(), "add_bias", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += bv(0, j);
  const std::size_t ai = a.id, bi = bias.id;
  return a.tape->record(std::move(out), {a, bias}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* ga = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gb)(0, j) += g(i, j);
    }
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(j, i) += g(i, j);
  });
}

/// Row-major reinterpretation.
inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  if (rows * cols != av.size()) {
    throw ShapeError("reshape " + av.shape_string() + " to (" + std::to_string(rows) + "x" +
                     std::to_string(cols) + ")");
  }
  Tensor out(rows, cols, std::vector<double>(av.values().begin(), av.values().end()));
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

/// Side-by-side concatenation of tensors with equal row counts.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    detail::require(p.rows() == rows, "concat", parts[0].value(), p.value());
    ids.push_back(p.id);
    offsets.push_back(cols);
    cols += p.cols();
  }
  Tensor out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offsets[k] + j) = pv(i, j);
  }
  return parts[0].tape->record(
      std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          Tensor* gk = t.grad_buffer(ids[k]);
          if (!gk) continue;
          for (std::size_t i = 0; i < gk->rows(); ++i)
            for (std::size_t j = 0; j < gk->cols(); ++j) (*gk)(i, j) += g(i, offsets[k] + j);
        }
      });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, begin + count).
inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " + av.shape_string());
  }
  Tensor out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, begin + j);
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai, begin](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (*ga)(i, begin + j) += g(i, j);
  });
}

/// axis 0 averages rows (-> 1 x c); axis 1 averages columns (-> r x 1).
inline Var mean_over_axis(Var a, int axis) {
  const Tensor& av = a.value();
  if (axis != 0 && axis != 1) throw ShapeError("mean_over_axis: axis must be 0 or 1");
  const std::size_t n = axis == 0 ? av.rows() : av.cols();
  if (n == 0) throw ShapeError("mean_over_axis over an empty axis");
  Tensor out = axis == 0 ? Tensor(1, av.cols()) : Tensor(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) {
      if (axis == 0) {
        out(0, j) += av(i, j);
      } else {
        out(i, 0) += av(i, j);
      }
    }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out.values()) v *= inv;
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai, axis, inv](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < ga->rows(); ++i)
      for (std::size_t j = 0; j < ga->cols(); ++j)
        (*ga)(i, j) += inv * (axis == 0 ? g(0, j) : g(i, 0));
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ai = a.id;
  return a.tape->record(Tensor::scalar(s), {a}, [ai](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const double g = t.grad_of(self)[0];
    for (auto& v : ga->values()) v += g;
  });
}

/// Row-wise softmax.
inline Var softmax(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const auto r = av.row_span(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) z += (out(i, j) = std::exp(r[j] - m));
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) /= z;
  }
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) (*ga)(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

/// Row-wise log-softmax.
inline Var log_softmax(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const auto r = av.row_span(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) = r[j] - lz;
  }
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        (*ga)(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
    }
  });
}

/// Depthwise 1-D cross-correlation along the row axis with one shared kernel:
/// out(t, j) = sum_m kernel[m] * seq(t + m, j). Sequences shorter than the
/// kernel are zero-padded at the end to kernel length.
inline Var conv1d(Var seq, Var kernel) {
  const Tensor& sv = seq.value();
  const Tensor& kv = kernel.value();
  if (kv.rows() != 1 && kv.cols() != 1) {
    throw ShapeError("conv1d: kernel must be a vector, got " + kv.shape_string());
  }
  const std::size_t k = kv.size();
  if (k == 0) throw ShapeError("conv1d: empty kernel");
  const std::size_t len = sv.rows(), d = sv.cols();
  const std::size_t out_len = std::max(len, k) - k + 1;
  Tensor out(out_len, d);
  for (std::size_t t = 0; t < out_len; ++t)
    for (std::size_t m = 0; m < k && t + m < len; ++m) {
      const double w = kv[m];
      for (std::size_t j = 0; j < d; ++j) out(t, j) += w * sv(t + m, j);
    }
  const std::size_t si = seq.id, ki = kernel.id;
  return seq.tape->record(
      std::move(out), {seq, kernel}, [si, ki, k, len, d, out_len](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& sv = t.value(si);
        const Tensor& kv = t.value(ki);
        Tensor* gs = t.grad_buffer(si);
        Tensor* gk = t.grad_buffer(ki);
        for (std::size_t p = 0; p < out_len; ++p)
          for (std::size_t m = 0; m < k && p + m < len; ++m) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              if (gs) (*gs)(p + m, j) += kv[m] * g(p, j);
              acc += g(p, j) * sv(p + m, j);
            }
            if (gk) (*gk)[m] += acc;
          }
      });
}

/// Stacks table rows in the given order (embedding lookup).
inline Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& tv = table.value();
  Tensor out(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range " +
                       tv.shape_string());
    }
    const auto src = tv.row_span(indices[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  const std::size_t ti = table.id;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape->record(std::move(out), {table}, [ti, idx](Tape& t, std::size_t self) {
    Tensor* gt = t.grad_buffer(ti);
    if (!gt) return;
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (*gt)(idx[i], j) += g(i, j);
  });
}

/// out(i) = a(i, col[i]).
inline Var pick(Var a, std::span<const std::size_t> cols) {
  const Tensor& av = a.value();
  if (cols.size() != av.rows()) throw ShapeError("pick: one column index per row required");
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    if (cols[i] >= av.cols()) throw ShapeError("pick: column index out of range");
    out(i, 0) = av(i, cols[i]);
  }
  const std::size_t ai = a.id;
  std::vector<std::size_t> c(cols.begin(), cols.end());
  return a.tape->record(std::move(out), {a}, [ai, c](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ai);
    if (!ga) return;
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < c.size(); ++i) (*ga)(i, c[i]) += g(i, 0);
  });
}

/// out(i) = <a_i, b_i>.
inline Var rowwise_dot(Var a, Var b) {
  detail::require(a.value().same_shape(b.value()), "rowwise_dot", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j) * bv(i, j);
    out(i, 0) = s;
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    Tensor* ga = t.grad_buffer(ai);
    Tensor* gb = t.grad_buffer(bi);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) {
        if (ga) (*ga)(i, j) += g(i, 0) * bv(i, j);
        if (gb) (*gb)(i, j) += g(i, 0) * av(i, j);
      }
  });
}

struct LstmState {
  Var h;
  Var c;
};

/// One step of the classic LSTM cell over a batch of rows.
///   gates = x W + h U + b, split as [input | forget | output | candidate]
///   c' = sigmoid(f) * c + sigmoid(i) * tanh(g),  h' = sigmoid(o) * tanh(c')
/// x: B x d, h/c: B x H, W: d x 4H, U: H x 4H, b: 1 x 4H.
inline LstmState lstm_cell(Var x, LstmState prev, Var w, Var u, Var b) {
  const std::size_t hidden = prev.h.cols();
  if (w.cols() != 4 * hidden || u.cols() != 4 * hidden || u.rows() != hidden ||
      b.cols() != 4 * hidden || w.rows() != x.cols()) {
    throw ShapeError("lstm_cell: gate parameter shapes do not match hidden size " +
                     std::to_string(hidden));
  }
  Var gates = add_bias(add(matmul(x, w), matmul(prev.h, u)), b);
  Var in_gate = sigmoid(slice_cols(gates, 0, hidden));
  Var forget_gate = sigmoid(slice_cols(gates, hidden, hidden));
  Var out_gate = sigmoid(slice_cols(gates, 2 * hidden, hidden));
  Var candidate = tanh(slice_cols(gates, 3 * hidden, hidden));
  Var c = add(mul(forget_gate, prev.c), mul(in_gate, candidate));
  Var h = mul(out_gate, tanh(c));
  return {h, c};
}

}  // namespace cge::ad
