#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "cge/cge.hpp"

namespace cge::testing {

inline Graph make_graph(std::size_t nodes, std::vector<std::pair<NodeId, NodeId>> edges,
                        std::size_t classes = 1, std::size_t feature_dim = 0) {
  GraphData d;
  d.num_classes = classes;
  d.features = Tensor(nodes, feature_dim);
  d.labels.assign(nodes, kNoLabel);
  d.splits.assign(nodes, Split::None);
  d.edges = std::move(edges);
  return Graph::from_edges(std::move(d));
}

/// Small labelled graph: a ring of `nodes` with random features; node i has
/// label i % classes and alternates train/val/test.
inline Graph toy_graph(std::size_t nodes, std::size_t classes, std::size_t feature_dim,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  GraphData d;
  d.num_classes = classes;
  d.features = Tensor(nodes, feature_dim);
  for (double& v : d.features.values()) v = n01(rng);
  for (std::size_t i = 0; i < nodes; ++i) {
    d.labels.push_back(static_cast<int>(i % classes));
    d.splits.push_back(i % 3 == 0 ? Split::Val : i % 3 == 1 ? Split::Train : Split::Test);
    d.edges.emplace_back(i, (i + 1) % nodes);
  }
  if (nodes > 3) d.edges.emplace_back(0, nodes / 2);
  return Graph::from_edges(std::move(d));
}

inline std::vector<double> softmax_row(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  std::vector<double> out;
  for (double v : z) out.push_back(std::exp(v - m) / s);
  return out;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

/// Straight-line skip-gram loss -log softmax over all rows of `e`.
inline double skipgram_oracle(const Tensor& w, NodeId i, const Tensor& e, NodeId j) {
  double denom = 0.0;
  for (std::size_t k = 0; k < e.rows(); ++k) denom += std::exp(dot_rows(w, i, e, k));
  return -(dot_rows(w, i, e, j) - std::log(denom));
}

/// Unrolled LSTM weight oracle, one path at a time.
inline double lstm_weight_oracle(const std::vector<NodeId>& path, const Tensor& table,
                                 const Tensor& W, const Tensor& U, const Tensor& b,
                                 const Tensor& out) {
  const std::size_t h = U.rows(), d = table.cols();
  std::vector<double> hs(h, 0.0), cs(h, 0.0);
  for (NodeId n : path) {
    std::vector<double> z(4 * h);
    for (std::size_t k = 0; k < 4 * h; ++k) {
      double s = b[k];
      for (std::size_t j = 0; j < d; ++j) s += table(n, j) * W(j, k);
      for (std::size_t j = 0; j < h; ++j) s += hs[j] * U(j, k);
      z[k] = s;
    }
    for (std::size_t k = 0; k < h; ++k) {
      const double ig = sig(z[k]), fg = sig(z[h + k]), og = sig(z[2 * h + k]);
      const double g = std::tanh(z[3 * h + k]);
      cs[k] = fg * cs[k] + ig * g;
      hs[k] = og * std::tanh(cs[k]);
    }
  }
  double v = 0.0;
  for (std::size_t k = 0; k < h; ++k) v += hs[k] * out[k];
  return sig(std::clamp(v, -kWeightLogitClip, kWeightLogitClip));
}

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Tensor t(r, c);
  for (double& v : t.values()) v = scale * n01(rng);
  return t;
}

/// Re-draws every parameter of the store from N(0, scale^2).
inline void randomize(ParamStore& store, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  for (ParamId id = 0; id < store.size(); ++id) {
    Tensor& t = store.value(id);
    t = random_tensor(t.rows(), t.cols(), rng, scale);
  }
}

}  // namespace cge::testing
