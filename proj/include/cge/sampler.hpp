#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cge/error.hpp"
#include "cge/graph.hpp"

namespace cge {

using Walk = std::vector<NodeId>;

/// A contiguous piece of a walk (or a synthetic same-label pair). Its first
/// and last node form the skip-gram training pair.
struct SubPath {
  std::vector<NodeId> nodes;
  bool fixed_weight = false;

  NodeId start() const { return nodes.front(); }
  NodeId end() const { return nodes.back(); }
  std::size_t length() const { return nodes.size(); }
  friend bool operator==(const SubPath&, const SubPath&) = default;
};

struct PairCorpus {
  std::vector<SubPath> samples;
  std::uint64_t rng_seed = 0;
  friend bool operator==(const PairCorpus&, const PairCorpus&) = default;
};

/// SplitMix64 finaliser; derives independent stream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return step(step(step(seed) ^ a) ^ b);
}

/// Uniform random walk of at most max_len nodes; stops early at an isolated node.
template <class Rng>
Walk random_walk(const Graph& g, NodeId start, std::size_t max_len, Rng& rng) {
  if (start >= g.node_count()) {
    throw GraphError("random_walk: start node " + std::to_string(start) + " out of range");
  }
  if (max_len == 0) throw ConfigError("random_walk: max_len must be >= 1");
  Walk walk{start};
  walk.reserve(max_len);
  while (walk.size() < max_len) {
    const auto nbrs = g.neighbors(walk.back());
    if (nbrs.empty()) break;
    std::uniform_int_distribution<std::size_t> pick(0, nbrs.size() - 1);
    walk.push_back(nbrs[pick(rng)]);
  }
  return walk;
}

/// Every contiguous sub-sequence of length 1..window, shortest first and
/// left to right within a length.
inline std::vector<SubPath> extract_subpaths(const Walk& walk, std::size_t window) {
  if (window == 0) throw ConfigError("extract_subpaths: window must be >= 1");
  std::vector<SubPath> out;
  const std::size_t len = walk.size();
  for (std::size_t l = 1; l <= std::min(window, len); ++l) {
    for (std::size_t s = 0; s + l <= len; ++s) {
      out.push_back({Walk(walk.begin() + s, walk.begin() + s + l), false});
    }
  }
  return out;
}

/// Closed-form count of extract_subpaths(walk of length len, window).
constexpr std::size_t subpath_count(std::size_t len, std::size_t window) {
  std::size_t n = 0;
  for (std::size_t l = 1; l <= window && l <= len; ++l) n += len - l + 1;
  return n;
}

/// Same-label pairs among train nodes, drawn with replacement; classes with
/// fewer than two train nodes contribute nothing.
template <class Rng>
std::vector<SubPath> generate_label_pairs(const Graph& g, std::size_t pairs_per_class, Rng& rng) {
  std::map<int, std::vector<NodeId>> by_class;
  for (NodeId i : g.train_nodes()) by_class[g.label(i)].push_back(i);
  std::vector<SubPath> out;
  for (const auto& [label, members] : by_class) {
    if (members.size() < 2) continue;
    std::uniform_int_distribution<std::size_t> first(0, members.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, members.size() - 2);
    for (std::size_t p = 0; p < pairs_per_class; ++p) {
      const std::size_t a = first(rng);
      std::size_t b = second(rng);
      if (b >= a) ++b;
      out.push_back({{members[a], members[b]}, true});
    }
  }
  return out;
}

struct CorpusConfig {
  std::size_t walks_per_node = 10;
  std::size_t max_len = 10;
  std::size_t window = 3;
  std::size_t pairs_per_class = 100;
};

/// Walk-derived sub-paths of length >= 2 (in (node, walk index) order)
/// followed by the label pairs. Each walk draws from its own stream seeded
/// by (seed, node, walk index), so the result does not depend on scheduling.
inline PairCorpus build_corpus(const Graph& g, const CorpusConfig& cfg, std::uint64_t seed) {
  if (cfg.walks_per_node == 0 || cfg.max_len == 0 || cfg.window == 0) {
    throw ConfigError("build_corpus: walks_per_node, max_len and window must be positive");
  }
  PairCorpus corpus;
  corpus.rng_seed = seed;
  for (NodeId n = 0; n < g.node_count(); ++n) {
    for (std::size_t w = 0; w < cfg.walks_per_node; ++w) {
      std::mt19937_64 rng(mix_seed(seed, n + 1, w + 1));
      for (auto& sp : extract_subpaths(random_walk(g, n, cfg.max_len, rng), cfg.window)) {
        if (sp.length() >= 2) corpus.samples.push_back(std::move(sp));
      }
    }
  }
  if (cfg.pairs_per_class > 0) {
    std::mt19937_64 rng(mix_seed(seed, 0, 0xfeedULL));
    for (auto& sp : generate_label_pairs(g, cfg.pairs_per_class, rng)) {
      corpus.samples.push_back(std::move(sp));
    }
  }
  return corpus;
}

inline PairCorpus build_corpus(const Graph& g, std::size_t walks_per_node, std::size_t max_len,
                               std::size_t window, std::size_t pairs_per_class,
                               std::uint64_t seed) {
  return build_corpus(g, CorpusConfig{walks_per_node, max_len, window, pairs_per_class}, seed);
}

// Corpus export: one line per sub-path, "pair <fixed:0|1> <n_0> ... <n_k>".

inline void write_corpus(std::ostream& out, const PairCorpus& corpus) {
  for (const auto& sp : corpus.samples) {
    out << "pair " << (sp.fixed_weight ? 1 : 0);
    for (NodeId n : sp.nodes) out << ' ' << n;
    out << '\n';
  }
}

inline PairCorpus read_corpus(std::istream& in) {
  PairCorpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag != "pair") throw ParseError(lineno, "tag", "expected 'pair', found '" + tag + "'");
    int fixed = -1;
    if (!(ss >> fixed) || (fixed != 0 && fixed != 1)) {
      throw ParseError(lineno, "fixed", "expected 0 or 1");
    }
    SubPath sp;
    sp.fixed_weight = fixed == 1;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        sp.nodes.push_back(static_cast<NodeId>(v));
      } catch (const std::exception&) {
        throw ParseError(lineno, "node", "cannot parse node id '" + tok + "'");
      }
    }
    if (sp.nodes.empty()) throw ParseError(lineno, "node", "sub-path without nodes");
    corpus.samples.push_back(std::move(sp));
  }
  return corpus;
}

}  // namespace cge
