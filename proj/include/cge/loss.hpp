#pragma once

#include <map>
#include <random>
#include <span>
#include <vector>

#include "cge/autodiff.hpp"
#include "cge/graph.hpp"
#include "cge/model.hpp"
#include "cge/reweight.hpp"
#include "cge/sampler.hpp"

namespace cge {

struct LossConfig {
  double lambda = 1.0;
  /// 0 selects the full softmax over all nodes.
  std::size_t negatives = 0;
  /// Whether lambda scales L_u inside the inner (training) gradient.
  bool lambda_in_inner = true;
};

/// A draw of sub-paths for the unsupervised term, with the negative samples
/// for each pair fixed at draw time so the loss is a deterministic function
/// of the parameters.
struct UnsupBatch {
  std::vector<SubPath> paths;
  std::vector<std::vector<NodeId>> negatives;
};

/// Uniform over nodes other than `exclude`.
template <class Rng>
std::vector<NodeId> draw_negatives(std::size_t node_count, NodeId exclude, std::size_t count,
                                   Rng& rng) {
  if (count > 0 && node_count < 2) throw ConfigError("negative sampling needs at least 2 nodes");
  std::vector<NodeId> out;
  out.reserve(count);
  std::uniform_int_distribution<NodeId> pick(0, node_count - 2);
  for (std::size_t i = 0; i < count; ++i) {
    NodeId n = pick(rng);
    if (n >= exclude) ++n;
    out.push_back(n);
  }
  return out;
}

template <class Rng>
UnsupBatch sample_unsup_batch(const PairCorpus& corpus, std::size_t batch_size,
                              std::size_t negatives, std::size_t node_count, Rng& rng) {
  if (corpus.samples.empty()) throw Error("cannot draw a batch from an empty corpus");
  UnsupBatch batch;
  std::uniform_int_distribution<std::size_t> pick(0, corpus.samples.size() - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const SubPath& sp = corpus.samples[pick(rng)];
    batch.paths.push_back(sp);
    batch.negatives.push_back(draw_negatives(node_count, sp.end(), negatives, rng));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Skip-gram pair losses

/// -log softmax_j(e . w_i) for each (i, j), as a B x 1 column.
inline ad::Var skipgram_losses(ad::Var input_table, ad::Var output_table,
                               std::span<const NodeId> starts, std::span<const NodeId> ends) {
  ad::Var wi = ad::gather_rows(input_table, starts);
  ad::Var logp = ad::log_softmax(ad::matmul_nt(wi, output_table));
  return ad::scale(ad::pick(logp, ends), -1.0);
}

/// -log sigma(e_j . w_i) - sum_n log sigma(-e_n . w_i), as a B x 1 column.
inline ad::Var negative_sampling_losses(ad::Var input_table, ad::Var output_table,
                                        std::span<const NodeId> starts,
                                        std::span<const NodeId> ends,
                                        std::span<const std::vector<NodeId>> negatives) {
  if (negatives.size() != starts.size()) throw ShapeError("one negative list per pair required");
  const std::size_t m = negatives.empty() ? 0 : negatives[0].size();
  if (m == 0) throw ConfigError("negative sampling requires at least one negative");
  ad::Var wi = ad::gather_rows(input_table, starts);
  ad::Var pos = ad::log_sigmoid(ad::rowwise_dot(wi, ad::gather_rows(output_table, ends)));
  ad::Var total = pos;
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<NodeId> col;
    col.reserve(negatives.size());
    for (const auto& row : negatives) {
      if (row.size() != m) throw ShapeError("ragged negative lists");
      col.push_back(row[k]);
    }
    ad::Var dot = ad::rowwise_dot(wi, ad::gather_rows(output_table, col));
    total = ad::add(total, ad::log_sigmoid(ad::scale(dot, -1.0)));
  }
  return ad::scale(total, -1.0);
}

/// Scalar skip-gram loss of predicting row j of `outputs` from input vector w_i.
inline double skipgram_loss(std::span<const double> w_i, NodeId j, const Tensor& outputs) {
  ad::Tape tape;
  ad::Var in = tape.constant(Tensor(1, w_i.size(), std::vector<double>(w_i.begin(), w_i.end())));
  ad::Var out = tape.constant(outputs);
  const NodeId zero = 0;
  return skipgram_losses(in, out, std::span<const NodeId>(&zero, 1), std::span<const NodeId>(&j, 1))
      .value()
      .item();
}

inline double skipgram_loss_negative(std::span<const double> w_i, NodeId j,
                                     const std::vector<NodeId>& negatives,
                                     const Tensor& outputs) {
  ad::Tape tape;
  ad::Var in = tape.constant(Tensor(1, w_i.size(), std::vector<double>(w_i.begin(), w_i.end())));
  ad::Var out = tape.constant(outputs);
  const NodeId zero = 0;
  const std::vector<NodeId> negs[1] = {negatives};
  return negative_sampling_losses(in, out, std::span<const NodeId>(&zero, 1),
                                  std::span<const NodeId>(&j, 1), negs)
      .value()
      .item();
}

// ---------------------------------------------------------------------------
// Unsupervised term L_u = sum_k A(p_k) loss(w_start, e_end)

struct UnsupTerms {
  ad::Var total;
  /// Weights of the non-fixed paths, in batch order.
  std::vector<double> path_weights;
};

inline UnsupTerms unsup_loss_terms(ad::Tape& tape, const Model& model, const UnsupBatch& batch,
                                   const LossConfig& cfg) {
  namespace n = param_names;
  if (batch.paths.empty()) throw ConfigError("unsup_loss: empty batch");
  if (cfg.negatives > 0 && batch.negatives.size() != batch.paths.size()) {
    throw ShapeError("unsup_loss: batch lacks negative samples");
  }
  ad::Var w = tape.param(n::kInputTable);
  ad::Var e = tape.param(n::kOutputTable);

  auto pair_losses = [&](const std::vector<std::size_t>& idx) {
    std::vector<NodeId> starts, ends;
    std::vector<std::vector<NodeId>> negs;
    for (std::size_t i : idx) {
      const SubPath& sp = batch.paths[i];
      if (sp.start() >= model.spec.nodes || sp.end() >= model.spec.nodes) {
        throw GraphError("unsup_loss: node id out of range");
      }
      starts.push_back(sp.start());
      ends.push_back(sp.end());
      if (cfg.negatives > 0) negs.push_back(batch.negatives[i]);
    }
    return cfg.negatives > 0 ? negative_sampling_losses(w, e, starts, ends, negs)
                             : skipgram_losses(w, e, starts, ends);
  };

  std::vector<std::size_t> fixed;
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  const bool pinned = model.weight_model.variant == Variant::Fixed;
  for (std::size_t i = 0; i < batch.paths.size(); ++i) {
    if (batch.paths[i].fixed_weight || pinned) {
      fixed.push_back(i);
    } else {
      by_len[batch.paths[i].length()].push_back(i);
    }
  }

  UnsupTerms terms;
  std::vector<double> weight_of(batch.paths.size(), 1.0);
  std::vector<ad::Var> parts;
  for (const auto& [len, idx] : by_len) {
    std::vector<const SubPath*> group;
    for (std::size_t i : idx) group.push_back(&batch.paths[i]);
    ad::Var a = weight_batch(tape, model.weight_model, w, group);
    for (std::size_t k = 0; k < idx.size(); ++k) weight_of[idx[k]] = a.value()[k];
    parts.push_back(ad::sum(ad::mul(a, pair_losses(idx))));
  }
  if (!fixed.empty()) parts.push_back(ad::sum(pair_losses(fixed)));
  for (std::size_t i = 0; i < batch.paths.size(); ++i) {
    if (!(batch.paths[i].fixed_weight || pinned)) terms.path_weights.push_back(weight_of[i]);
  }
  terms.total = parts[0];
  for (std::size_t k = 1; k < parts.size(); ++k) terms.total = ad::add(terms.total, parts[k]);
  return terms;
}

inline ad::Var unsup_loss(ad::Tape& tape, const Model& model, const UnsupBatch& batch,
                          const LossConfig& cfg) {
  return unsup_loss_terms(tape, model, batch, cfg).total;
}

// ---------------------------------------------------------------------------
// Supervised term

inline Tensor gather_features(const Graph& g, std::span<const NodeId> nodes) {
  Tensor x(nodes.size(), g.feature_dim());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto row = g.feature_row(nodes[i]);
    std::copy(row.begin(), row.end(), x.row_span(i).begin());
  }
  return x;
}

/// Class logits (N x C) of the supervised head.
inline ad::Var class_logits(ad::Tape& tape, const Model& model, const Graph& g,
                            std::span<const NodeId> nodes) {
  namespace n = param_names;
  if (g.feature_dim() != model.spec.feature_dim) {
    throw ShapeError("feature dimension " + std::to_string(g.feature_dim()) +
                     " does not match model (" + std::to_string(model.spec.feature_dim) + ")");
  }
  ad::Var x = tape.constant(gather_features(g, nodes));
  if (model.spec.mode == Mode::Transductive) {
    ad::Var e = ad::gather_rows(tape.param(n::kOutputTable), nodes);
    ad::Var hx = ad::tanh(ad::add_bias(ad::matmul(x, tape.param(n::kHkW)), tape.param(n::kHkB)));
    ad::Var he = ad::tanh(ad::add_bias(ad::matmul(e, tape.param(n::kHlW)), tape.param(n::kHlB)));
    return ad::add_bias(ad::matmul(ad::concat({hx, he}), tape.param(n::kOutW)),
                        tape.param(n::kOutB));
  }
  ad::Var emb = ad::tanh(ad::add_bias(ad::matmul(x, tape.param(n::kEmbW)), tape.param(n::kEmbB)));
  return ad::add_bias(ad::matmul(ad::concat({x, emb}), tape.param(n::kHW)), tape.param(n::kHB));
}

/// Cross-entropy summed over the given labelled nodes; 0 for an empty batch.
inline ad::Var sup_loss(ad::Tape& tape, const Model& model, const Graph& g,
                        std::span<const NodeId> nodes) {
  if (nodes.empty()) return tape.constant(Tensor::scalar(0.0));
  std::vector<std::size_t> targets;
  for (NodeId i : nodes) {
    if (i >= g.node_count()) throw GraphError("sup_loss: node id out of range");
    if (!g.is_labeled(i)) throw GraphError("sup_loss: node " + std::to_string(i) + " is unlabeled");
    if (static_cast<std::size_t>(g.label(i)) >= model.spec.classes) {
      throw GraphError("sup_loss: label exceeds the model's class count");
    }
    targets.push_back(static_cast<std::size_t>(g.label(i)));
  }
  ad::Var logp = ad::log_softmax(class_logits(tape, model, g, nodes));
  return ad::scale(ad::sum(ad::pick(logp, targets)), -1.0);
}

inline ad::Var sup_loss_transductive(ad::Tape& tape, const Model& model, const Graph& g,
                                     std::span<const NodeId> nodes) {
  if (model.spec.mode != Mode::Transductive) throw ConfigError("model is not transductive");
  return sup_loss(tape, model, g, nodes);
}

inline ad::Var sup_loss_inductive(ad::Tape& tape, const Model& model, const Graph& g,
                                  std::span<const NodeId> nodes) {
  if (model.spec.mode != Mode::Inductive) throw ConfigError("model is not inductive");
  return sup_loss(tape, model, g, nodes);
}

/// L_s + lambda * L_u.
inline ad::Var semi_loss(ad::Tape& tape, const Model& model, const Graph& g,
                         std::span<const NodeId> supervised, const UnsupBatch& unsup,
                         const LossConfig& cfg) {
  if (cfg.lambda < 0) throw ConfigError("lambda must be >= 0");
  ad::Var ls = sup_loss(tape, model, g, supervised);
  if (unsup.paths.empty()) return ls;
  return ad::add(ls, ad::scale(unsup_loss(tape, model, unsup, cfg), cfg.lambda));
}

/// Row-wise argmax of the supervised head.
inline std::vector<int> predict(const Model& model, const Graph& g, std::span<const NodeId> nodes) {
  if (nodes.empty()) return {};
  ad::Tape tape(model.store);
  const Tensor& logits = class_logits(tape, model, g, nodes).value();
  std::vector<int> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row_span(i);
    out.push_back(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
  }
  return out;
}

}  // namespace cge
