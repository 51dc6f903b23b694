#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cge/error.hpp"
#include "cge/tensor.hpp"

namespace cge {

using NodeId = std::size_t;

inline constexpr int kNoLabel = -1;

enum class Split { None, Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::None: break;
  }
  return "none";
}

struct DatasetStats {
  std::size_t classes = 0;
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t labeled = 0;
  std::size_t test_valid = 0;
  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

/// Everything needed to build a Graph; edges may be listed in either
/// direction and more than once.
struct GraphData {
  std::size_t num_classes = 0;
  Tensor features;  // K x D
  std::vector<int> labels;
  std::vector<Split> splits;
  std::vector<std::pair<NodeId, NodeId>> edges;
};

/// Immutable undirected graph with node features, optional labels and a
/// train/val/test assignment. Neighbour lists are sorted and symmetric.
class Graph {
 public:
  Graph() = default;

  /// Symmetrises and de-duplicates the edge list.
  static Graph from_edges(GraphData data) {
    const std::size_t k = data.labels.size();
    validate_nodes(data, k);
    std::vector<std::vector<NodeId>> adj(k);
    for (auto [a, b] : data.edges) {
      if (a >= k || b >= k) {
        throw GraphError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                         ") references a node id >= " + std::to_string(k));
      }
      if (a == b) throw GraphError("self-loop on node " + std::to_string(a));
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    for (auto& n : adj) {
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
    }
    return Graph(std::move(data), std::move(adj));
  }

  /// Takes adjacency as given; rejects lists that are not symmetric.
  static Graph from_adjacency(GraphData data, std::vector<std::vector<NodeId>> adj) {
    const std::size_t k = data.labels.size();
    validate_nodes(data, k);
    if (adj.size() != k) throw GraphError("adjacency has wrong node count");
    for (auto& n : adj) {
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
    }
    for (NodeId i = 0; i < k; ++i) {
      for (NodeId j : adj[i]) {
        if (j >= k) {
          throw GraphError("node " + std::to_string(i) + " lists out-of-range neighbour " +
                           std::to_string(j));
        }
        if (j == i) throw GraphError("self-loop on node " + std::to_string(i));
        if (!std::binary_search(adj[j].begin(), adj[j].end(), i)) {
          throw GraphError("asymmetric edge: " + std::to_string(i) + " -> " + std::to_string(j) +
                           " has no reverse entry");
        }
      }
    }
    data.edges.clear();
    return Graph(std::move(data), std::move(adj));
  }

  std::size_t node_count() const noexcept { return adj_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t feature_dim() const noexcept { return features_.cols(); }
  const Tensor& features() const noexcept { return features_; }
  std::span<const double> feature_row(NodeId i) const { return features_.row_span(i); }

  std::span<const NodeId> neighbors(NodeId i) const { return adj_.at(i); }
  std::size_t degree(NodeId i) const { return adj_.at(i).size(); }
  bool has_edge(NodeId a, NodeId b) const {
    const auto& n = adj_.at(a);
    return std::binary_search(n.begin(), n.end(), b);
  }

  int label(NodeId i) const { return labels_.at(i); }
  bool is_labeled(NodeId i) const { return labels_.at(i) != kNoLabel; }
  Split split(NodeId i) const { return splits_.at(i); }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<Split>& splits() const noexcept { return splits_; }

  std::vector<NodeId> nodes_in(Split s) const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < splits_.size(); ++i) {
      if (splits_[i] == s) out.push_back(i);
    }
    return out;
  }
  std::vector<NodeId> train_nodes() const { return nodes_in(Split::Train); }
  std::vector<NodeId> val_nodes() const { return nodes_in(Split::Val); }
  std::vector<NodeId> test_nodes() const { return nodes_in(Split::Test); }

  /// Undirected pairs (i, j) with i < j, in lexicographic order.
  std::vector<std::pair<NodeId, NodeId>> edges() const {
    std::vector<std::pair<NodeId, NodeId>> out;
    for (NodeId i = 0; i < adj_.size(); ++i) {
      for (NodeId j : adj_[i]) {
        if (i < j) out.emplace_back(i, j);
      }
    }
    return out;
  }
  std::size_t edge_count() const {
    std::size_t twice = 0;
    for (const auto& n : adj_) twice += n.size();
    return twice / 2;
  }

  /// A copy with different labels/splits (same structure and features).
  Graph with_labels(std::vector<int> labels, std::vector<Split> splits,
                    std::size_t num_classes) const {
    GraphData data{num_classes, features_, std::move(labels), std::move(splits), {}};
    validate_nodes(data, adj_.size());
    return Graph(std::move(data), adj_);
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.num_classes_ == b.num_classes_ && a.features_ == b.features_ &&
           a.labels_ == b.labels_ && a.splits_ == b.splits_ && a.adj_ == b.adj_;
  }

 private:
  Graph(GraphData data, std::vector<std::vector<NodeId>> adj)
      : num_classes_(data.num_classes),
        features_(std::move(data.features)),
        labels_(std::move(data.labels)),
        splits_(std::move(data.splits)),
        adj_(std::move(adj)) {}

  static void validate_nodes(const GraphData& data, std::size_t k) {
    if (data.splits.size() != k) throw GraphError("split count does not match node count");
    if (data.features.rows() != k) {
      throw GraphError("feature rows (" + std::to_string(data.features.rows()) +
                       ") do not match node count " + std::to_string(k));
    }
    for (NodeId i = 0; i < k; ++i) {
      const int y = data.labels[i];
      if (y != kNoLabel && (y < 0 || static_cast<std::size_t>(y) >= data.num_classes)) {
        throw GraphError("node " + std::to_string(i) + " has label " + std::to_string(y) +
                         " outside [0, " + std::to_string(data.num_classes) + ")");
      }
      if (data.splits[i] != Split::None && y == kNoLabel) {
        throw GraphError("node " + std::to_string(i) + " is in split " +
                         to_string(data.splits[i]) + " but has no label");
      }
    }
  }

  std::size_t num_classes_ = 0;
  Tensor features_;
  std::vector<int> labels_;
  std::vector<Split> splits_;
  std::vector<std::vector<NodeId>> adj_;
};

inline DatasetStats stats(const Graph& g) {
  DatasetStats s;
  s.classes = g.num_classes();
  s.nodes = g.node_count();
  s.edges = g.edge_count();
  for (NodeId i = 0; i < g.node_count(); ++i) {
    if (g.split(i) == Split::Train) ++s.labeled;
    if (g.split(i) == Split::Val || g.split(i) == Split::Test) ++s.test_valid;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Portable text format
//
//   #nodes K
//   #classes C
//   #feature_dim D
//   node <id> <label|-1> <train|val|test|none> <D floats>     (K lines)
//   #edges E
//   edge <i> <j>                                              (E lines, i < j)

namespace detail {

inline Split parse_split(const std::string& s, std::size_t line) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "none") return Split::None;
  throw ParseError(line, "split", "unknown split '" + s + "'");
}

template <class T>
T parse_number(const std::string& tok, std::size_t line, const char* field) {
  std::istringstream ss(tok);
  T v{};
  ss >> v;
  if (!ss || !ss.eof()) throw ParseError(line, field, "cannot parse '" + tok + "'");
  return v;
}

inline std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(std::move(t));
  return out;
}

}  // namespace detail

inline Graph read_portable(std::istream& in) {
  std::string raw;
  std::size_t lineno = 0;
  auto next = [&](const char* expect) -> std::vector<std::string> {
    while (std::getline(in, raw)) {
      ++lineno;
      auto toks = detail::tokens(raw);
      if (!toks.empty()) return toks;
    }
    throw ParseError(lineno + 1, expect, "unexpected end of file");
  };
  auto header = [&](const char* name) -> std::size_t {
    auto toks = next(name);
    if (toks.size() != 2 || toks[0] != name) {
      throw ParseError(lineno, name,
                       "expected '" + std::string(name) + " <count>', found '" + raw + "'");
    }
    return detail::parse_number<std::size_t>(toks[1], lineno, name);
  };

  const std::size_t k = header("#nodes");
  const std::size_t c = header("#classes");
  const std::size_t d = header("#feature_dim");

  GraphData data;
  data.num_classes = c;
  data.features = Tensor(k, d);
  data.labels.assign(k, kNoLabel);
  data.splits.assign(k, Split::None);
  std::vector<bool> seen(k, false);
  for (std::size_t n = 0; n < k; ++n) {
    auto toks = next("node");
    if (toks[0] != "node") {
      throw ParseError(lineno, "node",
                       "expected node line " + std::to_string(n) + " of " + std::to_string(k) +
                           ", found '" + toks[0] + "'");
    }
    if (toks.size() != 4 + d) {
      throw ParseError(lineno, "node",
                       "expected " + std::to_string(4 + d) + " fields, found " +
                           std::to_string(toks.size()));
    }
    const auto id = detail::parse_number<std::size_t>(toks[1], lineno, "id");
    if (id >= k) throw ParseError(lineno, "id", "node id " + toks[1] + " out of range");
    if (seen[id]) throw ParseError(lineno, "id", "duplicate node id " + toks[1]);
    seen[id] = true;
    const int y = detail::parse_number<int>(toks[2], lineno, "label");
    if (y != kNoLabel && (y < 0 || static_cast<std::size_t>(y) >= c)) {
      throw ParseError(lineno, "label", "label " + toks[2] + " outside [0, C)");
    }
    data.labels[id] = y;
    data.splits[id] = detail::parse_split(toks[3], lineno);
    if (data.splits[id] != Split::None && y == kNoLabel) {
      throw ParseError(lineno, "split", "unlabeled node assigned to split " + toks[3]);
    }
    for (std::size_t j = 0; j < d; ++j) {
      data.features(id, j) = detail::parse_number<double>(toks[4 + j], lineno, "feature");
    }
  }

  const std::size_t e = header("#edges");
  data.edges.reserve(e);
  for (std::size_t n = 0; n < e; ++n) {
    auto toks = next("edge");
    if (toks[0] != "edge" || toks.size() != 3) {
      throw ParseError(lineno, "edge", "expected 'edge <i> <j>', found '" + raw + "'");
    }
    const auto a = detail::parse_number<std::size_t>(toks[1], lineno, "edge.i");
    const auto b = detail::parse_number<std::size_t>(toks[2], lineno, "edge.j");
    if (a >= k || b >= k) throw ParseError(lineno, "edge", "node id out of range");
    if (a == b) throw ParseError(lineno, "edge", "self-loop");
    data.edges.emplace_back(a, b);
  }
  while (std::getline(in, raw)) {
    ++lineno;
    if (!detail::tokens(raw).empty()) {
      throw ParseError(lineno, "trailer", "content after the declared edges");
    }
  }
  return Graph::from_edges(std::move(data));
}

inline void write_portable(std::ostream& out, const Graph& g) {
  char buf[32];
  out << "#nodes " << g.node_count() << "\n#classes " << g.num_classes() << "\n#feature_dim "
      << g.feature_dim() << "\n";
  for (NodeId i = 0; i < g.node_count(); ++i) {
    out << "node " << i << ' ' << g.label(i) << ' ' << to_string(g.split(i));
    for (double v : g.feature_row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ' ' << buf;
    }
    out << '\n';
  }
  const auto edges = g.edges();
  out << "#edges " << edges.size() << "\n";
  for (auto [a, b] : edges) out << "edge " << a << ' ' << b << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic graphs

struct SbmOptions {
  /// Standard deviation of the per-node noise added to the block mean.
  double feature_noise = 1.0;
};

/// Stochastic block model. Block index is the class label; per block,
/// `labels_per_block` random nodes go to train and the rest alternate
/// between val and test. Features are a random block mean plus noise.
inline Graph generate_sbm(std::size_t blocks, std::size_t nodes_per_block, double p_in,
                          double p_out, std::size_t labels_per_block, std::size_t feature_dim,
                          std::uint64_t seed, const SbmOptions& opt = {}) {
  if (blocks == 0) throw ConfigError("generate_sbm: at least one block is required");
  if (!(p_in >= 0.0 && p_in <= 1.0) || !(p_out >= 0.0 && p_out <= 1.0)) {
    throw ConfigError("generate_sbm: probabilities must lie in [0, 1]");
  }
  if (p_out > p_in) throw ConfigError("generate_sbm: p_out must not exceed p_in");
  if (labels_per_block > nodes_per_block) {
    throw ConfigError("generate_sbm: labels_per_block exceeds nodes_per_block");
  }
  const std::size_t k = blocks * nodes_per_block;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  GraphData data;
  data.num_classes = blocks;
  data.labels.resize(k);
  data.splits.assign(k, Split::None);
  for (NodeId i = 0; i < k; ++i) data.labels[i] = static_cast<int>(i / nodes_per_block);

  for (NodeId i = 0; i < k; ++i) {
    for (NodeId j = i + 1; j < k; ++j) {
      const double p = data.labels[i] == data.labels[j] ? p_in : p_out;
      if (unit(rng) < p) data.edges.emplace_back(i, j);
    }
  }

  Tensor means(blocks, feature_dim);
  for (auto& v : means.values()) v = normal(rng);
  data.features = Tensor(k, feature_dim);
  for (NodeId i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < feature_dim; ++j) {
      data.features(i, j) = means(data.labels[i], j) + opt.feature_noise * normal(rng);
    }
  }

  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<NodeId> members(nodes_per_block);
    std::iota(members.begin(), members.end(), b * nodes_per_block);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t r = 0; r < members.size(); ++r) {
      if (r < labels_per_block) {
        data.splits[members[r]] = Split::Train;
      } else {
        data.splits[members[r]] = (r - labels_per_block) % 2 == 0 ? Split::Val : Split::Test;
      }
    }
  }
  return Graph::from_edges(std::move(data));
}

/// Appends `count` unlabeled nodes, each wired to `degree` distinct partners
/// drawn uniformly from all other nodes (original and injected). Their
/// features are pure noise.
inline Graph inject_noise_nodes(const Graph& g, std::size_t count, std::size_t degree,
                                std::uint64_t seed, double feature_noise = 1.0) {
  const std::size_t k0 = g.node_count();
  const std::size_t k = k0 + count;
  if (count > 0 && degree >= k) throw ConfigError("inject_noise_nodes: degree too large");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  GraphData data;
  data.num_classes = g.num_classes();
  data.labels = g.labels();
  data.splits = g.splits();
  data.labels.resize(k, kNoLabel);
  data.splits.resize(k, Split::None);
  data.features = Tensor(k, g.feature_dim());
  for (NodeId i = 0; i < k0; ++i) {
    std::copy(g.feature_row(i).begin(), g.feature_row(i).end(), data.features.row_span(i).begin());
  }
  for (NodeId i = k0; i < k; ++i) {
    for (auto& v : data.features.row_span(i)) v = feature_noise * normal(rng);
  }
  data.edges = g.edges();
  std::uniform_int_distribution<NodeId> pick(0, k - 2);
  for (NodeId i = k0; i < k; ++i) {
    std::set<NodeId> partners;
    while (partners.size() < degree) {
      NodeId j = pick(rng);
      if (j >= i) ++j;
      partners.insert(j);
    }
    for (NodeId j : partners) data.edges.emplace_back(std::min(i, j), std::max(i, j));
  }
  return Graph::from_edges(std::move(data));
}

/// One-vs-rest relabelling for target-task runs: class `target` becomes 1,
/// every other labelled node 0. Splits are unchanged.
inline Graph one_vs_rest(const Graph& g, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= g.num_classes()) {
    throw ConfigError("one_vs_rest: target class out of range");
  }
  std::vector<int> labels = g.labels();
  for (int& y : labels) {
    if (y != kNoLabel) y = (y == target) ? 1 : 0;
  }
  return g.with_labels(std::move(labels), g.splits(), 2);
}

}  // namespace cge
