#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cge/autodiff.hpp"
#include "cge/error.hpp"
#include "cge/params.hpp"
#include "cge/sampler.hpp"

namespace cge {

/// Path re-weighting function A(p). `Fixed` pins every weight to 1, which
/// turns the weighted objective back into plain DeepWalk.
enum class Variant { Fixed, Average, Cnn, Lstm };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Average: return "average";
    case Variant::Cnn: return "cnn";
    case Variant::Lstm: return "lstm";
    case Variant::Fixed: break;
  }
  return "fixed";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "fixed") return Variant::Fixed;
  if (s == "average") return Variant::Average;
  if (s == "cnn") return Variant::Cnn;
  if (s == "lstm") return Variant::Lstm;
  throw ConfigError("unknown reweight variant '" + s + "'");
}

inline constexpr std::size_t kCnnKernel = 3;
/// Logits are clipped to this magnitude so weights stay strictly inside (0, 1).
inline constexpr double kWeightLogitClip = 30.0;

struct WeightModelParams {
  Variant variant = Variant::Fixed;
  std::size_t embed_dim = 0;
  std::size_t hidden = 0;
};

namespace param_names {
inline const std::string kAvgW = "wa.avg.w";
inline const std::string kAvgB = "wa.avg.b";
inline const std::string kCnnK1 = "wa.cnn.k1";
inline const std::string kCnnK2 = "wa.cnn.k2";
inline const std::string kLstmW = "wa.lstm.W";
inline const std::string kLstmU = "wa.lstm.U";
inline const std::string kLstmB = "wa.lstm.b";
inline const std::string kLstmOut = "wa.lstm.out";
}  // namespace param_names

/// Adds the variant's parameters to the weight-model family.
template <class Rng>
WeightModelParams register_weight_model(ParamStore& store, Variant variant, std::size_t embed_dim,
                                        std::size_t hidden, Rng& rng) {
  namespace n = param_names;
  WeightModelParams p{variant, embed_dim, hidden == 0 ? embed_dim : hidden};
  const std::size_t h = p.hidden;
  switch (variant) {
    case Variant::Fixed:
      break;
    case Variant::Average:
      store.add(n::kAvgW, Family::WeightModel, uniform_init(embed_dim, 1, embed_dim, rng));
      store.add(n::kAvgB, Family::WeightModel, uniform_init(1, 1, embed_dim, rng));
      break;
    case Variant::Cnn:
      store.add(n::kCnnK1, Family::WeightModel, uniform_init(kCnnKernel, 1, kCnnKernel, rng));
      store.add(n::kCnnK2, Family::WeightModel, uniform_init(kCnnKernel, 1, kCnnKernel, rng));
      break;
    case Variant::Lstm:
      store.add(n::kLstmW, Family::WeightModel, uniform_init(embed_dim, 4 * h, embed_dim + h, rng));
      store.add(n::kLstmU, Family::WeightModel, uniform_init(h, 4 * h, embed_dim + h, rng));
      store.add(n::kLstmB, Family::WeightModel, uniform_init(1, 4 * h, embed_dim + h, rng));
      store.add(n::kLstmOut, Family::WeightModel, uniform_init(h, 1, h, rng));
      break;
  }
  return p;
}

namespace detail {

inline void check_param_shape(const ad::Var& v, std::size_t rows, std::size_t cols,
                              const std::string& name) {
  if (v.rows() != rows || v.cols() != cols) {
    throw ShapeError("weight model parameter " + name + " has shape " +
                     v.value().shape_string() + ", expected (" + std::to_string(rows) + "x" +
                     std::to_string(cols) + ")");
  }
}

/// Node ids at position t of every path.
inline std::vector<std::size_t> column_at(std::span<const SubPath* const> paths, std::size_t t) {
  std::vector<std::size_t> ids;
  ids.reserve(paths.size());
  for (const SubPath* p : paths) ids.push_back(p->nodes[t]);
  return ids;
}

inline ad::Var weight_average(ad::Tape& tape, ad::Var table, std::span<const SubPath* const> paths,
                              std::size_t len) {
  namespace n = param_names;
  ad::Var w = tape.param(n::kAvgW);
  ad::Var b = tape.param(n::kAvgB);
  check_param_shape(w, table.cols(), 1, n::kAvgW);
  check_param_shape(b, 1, 1, n::kAvgB);
  ad::Var acc = ad::gather_rows(table, column_at(paths, 0));
  for (std::size_t t = 1; t < len; ++t) acc = ad::add(acc, ad::gather_rows(table, column_at(paths, t)));
  ad::Var mean = ad::scale(acc, 1.0 / static_cast<double>(len));
  return ad::add_bias(ad::matmul(mean, w), b);
}

// Depthwise convolution over positions with kernel 1, mean-pool to a
// d-vector per path, then convolution over the d entries with kernel 2 and
// mean-pool to a scalar. The batch is packed as len x (B*d) so that one
// conv1d call handles every path.
inline ad::Var weight_cnn(ad::Tape& tape, ad::Var table, std::span<const SubPath* const> paths,
                          std::size_t len) {
  namespace n = param_names;
  ad::Var k1 = tape.param(n::kCnnK1);
  ad::Var k2 = tape.param(n::kCnnK2);
  check_param_shape(k1, kCnnKernel, 1, n::kCnnK1);
  check_param_shape(k2, kCnnKernel, 1, n::kCnnK2);
  const std::size_t batch = paths.size();
  const std::size_t d = table.cols();
  std::vector<std::size_t> ids;
  ids.reserve(batch * len);
  for (std::size_t t = 0; t < len; ++t) {
    for (const SubPath* p : paths) ids.push_back(p->nodes[t]);
  }
  ad::Var seq = ad::reshape(ad::gather_rows(table, ids), len, batch * d);
  ad::Var h1 = ad::mean_over_axis(ad::conv1d(seq, k1), 0);         // 1 x (B*d)
  ad::Var per_dim = ad::transpose(ad::reshape(h1, batch, d));      // d x B
  ad::Var h2 = ad::mean_over_axis(ad::conv1d(per_dim, k2), 0);     // 1 x B
  return ad::transpose(h2);
}

inline ad::Var weight_lstm(ad::Tape& tape, ad::Var table, std::span<const SubPath* const> paths,
                           std::size_t len, std::size_t hidden) {
  namespace n = param_names;
  ad::Var w = tape.param(n::kLstmW);
  ad::Var u = tape.param(n::kLstmU);
  ad::Var b = tape.param(n::kLstmB);
  ad::Var out = tape.param(n::kLstmOut);
  check_param_shape(w, table.cols(), 4 * hidden, n::kLstmW);
  check_param_shape(u, hidden, 4 * hidden, n::kLstmU);
  check_param_shape(b, 1, 4 * hidden, n::kLstmB);
  check_param_shape(out, hidden, 1, n::kLstmOut);
  ad::LstmState state{tape.constant(Tensor(paths.size(), hidden)),
                      tape.constant(Tensor(paths.size(), hidden))};
  for (std::size_t t = 0; t < len; ++t) {
    state = ad::lstm_cell(ad::gather_rows(table, column_at(paths, t)), state, w, u, b);
  }
  return ad::matmul(state.h, out);
}

}  // namespace detail

/// Weights (B x 1) of a batch of equal-length paths. `table` is the input
/// embedding table; the result is differentiable with respect to it and to
/// the weight-model parameters.
inline ad::Var weight_batch(ad::Tape& tape, const WeightModelParams& params, ad::Var table,
                            std::span<const SubPath* const> paths) {
  if (paths.empty()) throw ShapeError("weight_batch: empty batch");
  const std::size_t len = paths[0]->length();
  for (const SubPath* p : paths) {
    if (p->length() != len) throw ShapeError("weight_batch: paths must share one length");
    for (NodeId id : p->nodes) {
      if (id >= table.rows()) {
        throw GraphError("weight: unknown node id " + std::to_string(id));
      }
    }
  }
  if (len == 0) throw ShapeError("weight_batch: empty path");
  if (params.variant == Variant::Fixed) return tape.constant(Tensor(paths.size(), 1, 1.0));
  if (params.embed_dim != table.cols()) {
    throw ShapeError("weight model expects embedding size " + std::to_string(params.embed_dim) +
                     ", table has " + std::to_string(table.cols()));
  }
  ad::Var logits;
  switch (params.variant) {
    case Variant::Average: logits = detail::weight_average(tape, table, paths, len); break;
    case Variant::Cnn: logits = detail::weight_cnn(tape, table, paths, len); break;
    case Variant::Lstm:
      logits = detail::weight_lstm(tape, table, paths, len, params.hidden);
      break;
    case Variant::Fixed: break;
  }
  return ad::sigmoid(ad::clamp(logits, -kWeightLogitClip, kWeightLogitClip));
}

/// Weight of a single path. Fixed-weight paths are 1 regardless of the model.
inline double weight(const SubPath& path, const Tensor& input_table, const ParamStore& store,
                     const WeightModelParams& params) {
  if (path.fixed_weight) return 1.0;
  ad::Tape tape(store);
  ad::Var table = tape.constant(input_table);
  const SubPath* p = &path;
  return weight_batch(tape, params, table, std::span<const SubPath* const>(&p, 1)).value().item();
}

/// Weights for many paths, evaluated in equal-length chunks; output order
/// matches the input order.
inline std::vector<double> weights(std::span<const SubPath> paths, const Tensor& input_table,
                                   const ParamStore& store, const WeightModelParams& params,
                                   std::size_t chunk = 4096) {
  std::vector<double> out(paths.size(), 1.0);
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (!paths[i].fixed_weight) by_len[paths[i].length()].push_back(i);
  }
  for (const auto& [len, idx] : by_len) {
    for (std::size_t begin = 0; begin < idx.size(); begin += chunk) {
      const std::size_t end = std::min(idx.size(), begin + chunk);
      std::vector<const SubPath*> group;
      for (std::size_t k = begin; k < end; ++k) group.push_back(&paths[idx[k]]);
      ad::Tape tape(store);
      ad::Var table = tape.constant(input_table);
      const Tensor& w = weight_batch(tape, params, table, group).value();
      for (std::size_t k = begin; k < end; ++k) out[idx[k]] = w[k - begin];
    }
  }
  return out;
}

}  // namespace cge
