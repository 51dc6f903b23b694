#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cge/autodiff.hpp"
#include "cge/error.hpp"
#include "cge/graph.hpp"
#include "cge/loss.hpp"
#include "cge/model.hpp"
#include "cge/sampler.hpp"

namespace cge {

/// How the outer (weight-model) gradient treats the virtual inner step.
/// First ignores it; Second differentiates through it, approximating the
/// mixed second derivative with central differences over alpha.
enum class Order { First, Second };

inline const char* to_string(Order o) { return o == Order::First ? "first" : "second"; }

inline Order parse_order(const std::string& s) {
  if (s == "first") return Order::First;
  if (s == "second") return Order::Second;
  throw ConfigError("unknown order '" + s + "'");
}

struct TrainConfig {
  Mode mode = Mode::Transductive;
  Variant variant = Variant::Lstm;
  Order order = Order::First;
  double lambda = 1.0;
  /// Virtual step size; negative means "use lr_alpha".
  double xi = -1.0;
  double lr_alpha = 0.02;
  double lr_wa = 0.01;
  std::size_t max_steps = 1000;
  std::size_t embed_dim = 16;
  std::size_t head_dim = 64;
  std::size_t lstm_hidden = 0;
  std::size_t batch_size = 512;
  std::size_t negatives = 0;
  /// Stop when validation loss has not improved for this many steps; 0 disables.
  std::size_t patience = 50;
  bool lambda_in_inner = true;
  CorpusConfig corpus;
  std::uint64_t seed = 1;

  double effective_xi() const { return xi < 0 ? lr_alpha : xi; }
  LossConfig loss() const { return {lambda, negatives, lambda_in_inner}; }
};

struct TrainBatch {
  std::vector<NodeId> supervised;
  UnsupBatch unsup;
};

struct TraceRow {
  std::size_t step = 0;
  double l_s_train = 0.0;
  double l_u = 0.0;
  double l_val = 0.0;
  double mean_weight = 1.0;
  double weight_variance = 0.0;
};

struct TrainedModel {
  Model model;
  std::vector<TraceRow> trace;
  bool converged = false;
};

struct InnerLosses {
  double l_s = 0.0;
  double l_u = 0.0;
};

namespace detail {

inline void check_finite(const std::vector<Tensor>& grads, const ParamStore& store, Family family,
                         const char* where) {
  const auto ids = store.ids(family);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    for (double v : grads[k].values()) {
      if (!std::isfinite(v)) {
        throw NumericalError(std::string(where) + ": non-finite gradient in '" +
                             store.name(ids[k]) + "'");
      }
    }
  }
}

inline double sq_norm(const std::vector<Tensor>& ts) {
  double s = 0.0;
  for (const auto& t : ts)
    for (double v : t.values()) s += v * v;
  return s;
}

/// a + s * b, tensor by tensor.
inline std::vector<Tensor> axpy(const std::vector<Tensor>& a, double s,
                                const std::vector<Tensor>& b) {
  std::vector<Tensor> out = a;
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto o = out[k].values();
    auto bv = b[k].values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += s * bv[i];
  }
  return out;
}

}  // namespace detail

/// L_train = L_s,train + c * L_u with c = lambda when lambda_in_inner, else 1.
inline ad::Var train_loss(ad::Tape& tape, const Model& model, const Graph& g,
                          const TrainBatch& batch, const LossConfig& cfg, InnerLosses* parts = nullptr) {
  ad::Var ls = sup_loss(tape, model, g, batch.supervised);
  ad::Var lu = unsup_loss(tape, model, batch.unsup, cfg);
  if (parts) *parts = {ls.value().item(), lu.value().item()};
  return ad::add(ls, ad::scale(lu, cfg.lambda_in_inner ? cfg.lambda : 1.0));
}

/// Gradient of L_train with respect to every parameter, grouped by family.
struct FamilyGradients {
  std::vector<Tensor> alpha;
  std::vector<Tensor> weight_model;
};

inline FamilyGradients train_gradients(Model& model, const Graph& g, const TrainBatch& batch,
                                       const LossConfig& cfg, InnerLosses* parts = nullptr) {
  ad::Tape tape(model.store);
  tape.backward(train_loss(tape, model, g, batch, cfg, parts));
  return {model.store.grad_snapshot(Family::Alpha),
          model.store.grad_snapshot(Family::WeightModel)};
}

/// alpha <- alpha - lr * grad_alpha L_train. The weight model is untouched.
inline InnerLosses inner_step(Model& model, const Graph& g, const TrainBatch& batch,
                              const LossConfig& cfg, double lr_alpha) {
  if (lr_alpha < 0) throw ConfigError("lr_alpha must be >= 0");
  InnerLosses parts;
  auto grads = train_gradients(model, g, batch, cfg, &parts).alpha;
  detail::check_finite(grads, model.store, Family::Alpha, "inner_step");
  auto alpha = model.store.snapshot(Family::Alpha);
  sgd_step(alpha, grads, lr_alpha);
  model.store.restore(Family::Alpha, alpha);
  return parts;
}

/// One-step unrolled parameters alpha - xi * grad_alpha L_train, as a detached copy.
inline std::vector<Tensor> virtual_step(const Model& model, const Graph& g,
                                        const TrainBatch& batch, const LossConfig& cfg,
                                        double xi) {
  if (xi < 0) throw ConfigError("xi must be >= 0");
  auto alpha = model.store.snapshot(Family::Alpha);
  if (xi == 0.0) return alpha;
  Model scratch = model;
  auto grads = train_gradients(scratch, g, batch, cfg).alpha;
  detail::check_finite(grads, scratch.store, Family::Alpha, "virtual_step");
  sgd_step(alpha, grads, xi);
  return alpha;
}

struct OuterGradient {
  std::vector<Tensor> grads;
  /// L_u on the validation draw at the point where the direct term is taken.
  double l_u = 0.0;
  std::vector<double> path_weights;
};

/// Gradient of L_u(w_A, alpha') with respect to w_A.
///   First:  alpha' = alpha (xi ignored).
///   Second: alpha' = alpha - xi grad_alpha L_train(w_A, alpha), plus the chain
///           term -xi * d^2 L_train / dw_A dalpha . grad_alpha' L_u, whose
///           Hessian-vector product is a central difference of grad_w_A L_train
///           at alpha +/- eps v, eps = 0.01 / |v|.
inline OuterGradient outer_gradient(const Model& model, const Graph& g, const TrainBatch& train,
                                    const UnsupBatch& val, const LossConfig& cfg, double xi,
                                    Order order) {
  Model at = model;
  if (order == Order::Second && xi > 0.0) {
    at.store.restore(Family::Alpha, virtual_step(model, g, train, cfg, xi));
  }
  OuterGradient out;
  {
    ad::Tape tape(at.store);
    UnsupTerms terms = unsup_loss_terms(tape, at, val, cfg);
    tape.backward(terms.total);
    out.l_u = terms.total.value().item();
    out.path_weights = std::move(terms.path_weights);
  }
  out.grads = at.store.grad_snapshot(Family::WeightModel);
  if (order == Order::Second && xi > 0.0) {
    const auto v = at.store.grad_snapshot(Family::Alpha);
    const double norm = std::sqrt(detail::sq_norm(v));
    if (norm > 0.0) {
      const double eps = 0.01 / norm;
      const auto alpha = model.store.snapshot(Family::Alpha);
      Model probe = model;
      probe.store.restore(Family::Alpha, detail::axpy(alpha, eps, v));
      const auto plus = train_gradients(probe, g, train, cfg).weight_model;
      probe.store.restore(Family::Alpha, detail::axpy(alpha, -eps, v));
      const auto minus = train_gradients(probe, g, train, cfg).weight_model;
      for (std::size_t k = 0; k < out.grads.size(); ++k) {
        auto o = out.grads[k].values();
        for (std::size_t i = 0; i < o.size(); ++i) {
          o[i] -= xi * (plus[k][i] - minus[k][i]) / (2.0 * eps);
        }
      }
    }
  }
  detail::check_finite(out.grads, model.store, Family::WeightModel, "outer_step");
  return out;
}

/// w_A <- w_A - lr_wa * outer gradient. Alpha is untouched.
inline OuterGradient outer_step(Model& model, const Graph& g, const TrainBatch& train,
                                const UnsupBatch& val, const LossConfig& cfg, double lr_wa,
                                double xi, Order order) {
  if (lr_wa < 0) throw ConfigError("lr_wa must be >= 0");
  OuterGradient og = outer_gradient(model, g, train, val, cfg, xi, order);
  auto wa = model.store.snapshot(Family::WeightModel);
  sgd_step(wa, og.grads, lr_wa);
  model.store.restore(Family::WeightModel, wa);
  return og;
}

inline ModelSpec model_spec(const Graph& g, const TrainConfig& cfg) {
  ModelSpec spec;
  spec.mode = cfg.mode;
  spec.variant = cfg.variant;
  spec.nodes = g.node_count();
  spec.embed_dim = cfg.embed_dim;
  spec.feature_dim = g.feature_dim();
  spec.classes = g.num_classes();
  spec.head_dim = cfg.head_dim;
  spec.lstm_hidden = cfg.lstm_hidden;
  return spec;
}

/// Alternates one inner step on alpha and one outer step on w_A per
/// iteration until max_steps or a validation-loss plateau.
inline TrainedModel train(const Graph& g, const PairCorpus& corpus, const TrainConfig& cfg) {
  if (cfg.lambda < 0) throw ConfigError("lambda must be >= 0");
  if (cfg.effective_xi() < 0) throw ConfigError("xi must be >= 0");
  const auto train_nodes = g.train_nodes();
  const auto val_nodes = g.val_nodes();
  if (train_nodes.empty() && cfg.variant != Variant::Fixed) {
    throw ConfigError("training a re-weighting model requires labelled train nodes");
  }
  TrainedModel result{Model::init(model_spec(g, cfg), mix_seed(cfg.seed, 1)), {}, false};
  if (cfg.max_steps == 0) return result;
  if (corpus.samples.empty()) throw Error("train: the path corpus is empty");

  Model& model = result.model;
  const LossConfig loss_cfg = cfg.loss();
  const double xi = cfg.effective_xi();
  std::mt19937_64 rng(mix_seed(cfg.seed, 2));
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    TrainBatch tb{train_nodes,
                  sample_unsup_batch(corpus, cfg.batch_size, cfg.negatives, g.node_count(), rng)};
    const InnerLosses inner = inner_step(model, g, tb, loss_cfg, cfg.lr_alpha);
    const UnsupBatch vb =
        sample_unsup_batch(corpus, cfg.batch_size, cfg.negatives, g.node_count(), rng);

    OuterGradient og;
    if (cfg.variant == Variant::Fixed) {
      ad::Tape tape(model.store);
      og.l_u = unsup_loss(tape, model, vb, loss_cfg).value().item();
    } else {
      og = outer_step(model, g, tb, vb, loss_cfg, cfg.lr_wa, xi, cfg.order);
      if (cfg.order == Order::Second && xi > 0.0) {
        // Report L_u at the current alpha rather than at the unrolled point.
        Model before = model;
        ad::Tape tape(before.store);
        og.l_u = unsup_loss(tape, before, vb, loss_cfg).value().item();
      }
    }
    double l_s_val = 0.0;
    {
      ad::Tape tape(model.store);
      l_s_val = sup_loss(tape, model, g, val_nodes).value().item();
    }

    TraceRow row{step, inner.l_s, inner.l_u, l_s_val + cfg.lambda * og.l_u, 1.0, 0.0};
    if (!og.path_weights.empty()) {
      double m = 0.0;
      for (double w : og.path_weights) m += w;
      m /= static_cast<double>(og.path_weights.size());
      double v = 0.0;
      for (double w : og.path_weights) v += (w - m) * (w - m);
      row.mean_weight = m;
      row.weight_variance = v / static_cast<double>(og.path_weights.size());
    }
    result.trace.push_back(row);

    if (cfg.patience > 0) {
      if (row.l_val < best) {
        best = row.l_val;
        best_step = step;
      } else if (step - best_step >= cfg.patience) {
        result.converged = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace cge
