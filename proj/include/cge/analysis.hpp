#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cge/error.hpp"
#include "cge/graph.hpp"
#include "cge/sampler.hpp"

namespace cge {

struct PathRecord {
  std::size_t path_id = 0;
  std::size_t length = 0;
  std::size_t diversity = 0;
  double weight = 0.0;
  /// Sorted, distinct class ids of the labelled nodes on the path.
  std::vector<int> categories;

  friend bool operator==(const PathRecord&, const PathRecord&) = default;
};

inline PathRecord make_record(std::size_t id, const SubPath& path, double weight, const Graph& g) {
  PathRecord r;
  r.path_id = id;
  r.length = path.length();
  std::set<NodeId> distinct(path.nodes.begin(), path.nodes.end());
  r.diversity = distinct.size();
  r.weight = weight;
  std::set<int> cats;
  for (NodeId n : distinct) {
    if (n >= g.node_count()) throw GraphError("make_record: unknown node id " + std::to_string(n));
    if (g.is_labeled(n)) cats.insert(g.label(n));
  }
  r.categories.assign(cats.begin(), cats.end());
  return r;
}

/// Records for the walk-derived paths of a corpus; fixed-weight label pairs are skipped.
inline std::vector<PathRecord> corpus_records(const PairCorpus& corpus,
                                              std::span<const double> weights, const Graph& g) {
  if (weights.size() != corpus.samples.size()) {
    throw ShapeError("corpus_records: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(corpus.samples.size()) + " paths");
  }
  std::vector<PathRecord> out;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    if (corpus.samples[i].fixed_weight) continue;
    out.push_back(make_record(i, corpus.samples[i], weights[i], g));
  }
  return out;
}

inline constexpr std::size_t kHistogramBins = 20;

struct WeightStats {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  std::array<std::size_t, kHistogramBins> histogram{};
};

/// Mean, population variance and a 20-bin histogram over [0, 1].
inline WeightStats weight_stats(std::span<const PathRecord> records) {
  if (records.empty()) throw Error("weight_stats: no records");
  WeightStats s;
  double m2 = 0.0;
  for (const auto& r : records) {
    ++s.count;
    const double delta = r.weight - s.mean;
    s.mean += delta / static_cast<double>(s.count);
    m2 += delta * (r.weight - s.mean);
    const double pos = std::clamp(r.weight, 0.0, 1.0) * static_cast<double>(kHistogramBins);
    const auto bin = std::min(kHistogramBins - 1, static_cast<std::size_t>(pos));
    ++s.histogram[bin];
  }
  s.variance = m2 / static_cast<double>(s.count);
  return s;
}

struct RelevanceReport {
  double with_target = 0.0;
  double without_target = 0.0;
  std::size_t with_count = 0;
  std::size_t without_count = 0;

  bool with_empty() const { return with_count == 0; }
  bool without_empty() const { return without_count == 0; }
};

inline bool touches(const PathRecord& r, std::span<const int> classes) {
  for (int c : r.categories) {
    if (std::find(classes.begin(), classes.end(), c) != classes.end()) return true;
  }
  return false;
}

inline RelevanceReport relevance_comparison(std::span<const PathRecord> records,
                                            std::span<const int> target_classes) {
  RelevanceReport rep;
  for (const auto& r : records) {
    if (touches(r, target_classes)) {
      rep.with_target += r.weight;
      ++rep.with_count;
    } else {
      rep.without_target += r.weight;
      ++rep.without_count;
    }
  }
  if (rep.with_count) rep.with_target /= static_cast<double>(rep.with_count);
  if (rep.without_count) rep.without_target /= static_cast<double>(rep.without_count);
  return rep;
}

struct CategoryMatrix {
  std::size_t targets = 0;
  std::size_t classes = 0;
  std::vector<std::optional<double>> cells;
  std::vector<std::size_t> counts;

  const std::optional<double>& at(std::size_t target, std::size_t category) const {
    return cells[target * classes + category];
  }
  std::size_t count(std::size_t target, std::size_t category) const {
    return counts[target * classes + category];
  }
};

/// runs[c] holds the records of the model trained for target class c.
/// Cell (c, y) is the mean weight of the paths in runs[c] containing class y.
inline CategoryMatrix category_matrix(std::span<const std::vector<PathRecord>> runs,
                                      std::size_t classes) {
  CategoryMatrix m;
  m.targets = runs.size();
  m.classes = classes;
  std::vector<double> sums(runs.size() * classes, 0.0);
  m.counts.assign(runs.size() * classes, 0);
  for (std::size_t c = 0; c < runs.size(); ++c) {
    for (const auto& r : runs[c]) {
      for (int y : r.categories) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
          throw Error("category_matrix: category " + std::to_string(y) + " out of range");
        }
        sums[c * classes + static_cast<std::size_t>(y)] += r.weight;
        ++m.counts[c * classes + static_cast<std::size_t>(y)];
      }
    }
  }
  m.cells.resize(sums.size());
  for (std::size_t k = 0; k < sums.size(); ++k) {
    if (m.counts[k]) m.cells[k] = sums[k] / static_cast<double>(m.counts[k]);
  }
  return m;
}

enum class CorrelationKey { Length, Diversity };

inline const char* to_string(CorrelationKey k) {
  return k == CorrelationKey::Length ? "length" : "diversity";
}

inline CorrelationKey parse_correlation_key(const std::string& s) {
  if (s == "length") return CorrelationKey::Length;
  if (s == "diversity") return CorrelationKey::Diversity;
  throw ConfigError("unknown correlation key '" + s + "'");
}

struct Bucket {
  std::size_t key = 0;
  std::size_t count = 0;
  double mean_weight = 0.0;
};

struct CorrelationReport {
  CorrelationKey key = CorrelationKey::Length;
  double pearson_r = 0.0;
  std::vector<Bucket> buckets;
};

/// Two-pass Pearson correlation, clamped to [-1, 1].
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (x.size() < 2) throw NumericalError("pearson: need at least two points");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) throw NumericalError("pearson: zero variance, r is undefined");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericalError("pearson: zero variance, r is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline std::size_t key_of(const PathRecord& r, CorrelationKey key) {
  return key == CorrelationKey::Length ? r.length : r.diversity;
}

/// Pearson r between key value and the mean weight of each key bucket.
inline CorrelationReport correlate(std::span<const PathRecord> records, CorrelationKey key) {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    auto& [sum, n] = acc[key_of(r, key)];
    sum += r.weight;
    ++n;
  }
  if (acc.size() < 2) {
    throw NumericalError(std::string("correlate: need at least two distinct ") + to_string(key) +
                         " values");
  }
  CorrelationReport rep;
  rep.key = key;
  std::vector<double> xs, ys;
  for (const auto& [k, v] : acc) {
    const double mean = v.first / static_cast<double>(v.second);
    rep.buckets.push_back({k, v.second, mean});
    xs.push_back(static_cast<double>(k));
    ys.push_back(mean);
  }
  rep.pearson_r = pearson(xs, ys);
  return rep;
}

/// Pearson r over individual records rather than bucket means.
inline double correlate_records(std::span<const PathRecord> records, CorrelationKey key) {
  std::vector<double> xs, ys;
  xs.reserve(records.size());
  ys.reserve(records.size());
  for (const auto& r : records) {
    xs.push_back(static_cast<double>(key_of(r, key)));
    ys.push_back(r.weight);
  }
  return pearson(xs, ys);
}

// weights.csv: path_id,length,diversity,weight,categories  (categories ';'-separated)

inline void write_weights_csv(std::ostream& out, std::span<const PathRecord> records) {
  out << "path_id,length,diversity,weight,categories\n";
  char buf[32];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.weight);
    out << r.path_id << ',' << r.length << ',' << r.diversity << ',' << buf << ',';
    for (std::size_t k = 0; k < r.categories.size(); ++k) {
      if (k) out << ';';
      out << r.categories[k];
    }
    out << '\n';
  }
}

inline std::vector<PathRecord> read_weights_csv(std::istream& in) {
  std::vector<PathRecord> out;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(1, "header", "missing header");
  ++lineno;
  if (line.rfind("path_id,length,diversity,weight", 0) != 0) {
    throw ParseError(lineno, "header", "unexpected header '" + line + "'");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 4 && f.size() != 5) {
      throw ParseError(lineno, "row", "expected 4 or 5 fields, found " + std::to_string(f.size()));
    }
    PathRecord r;
    const char* names[] = {"path_id", "length", "diversity", "weight"};
    for (std::size_t k = 0; k < 4; ++k) {
      try {
        std::size_t used = 0;
        if (k == 3) {
          r.weight = std::stod(f[k], &used);
        } else {
          const auto v = static_cast<std::size_t>(std::stoull(f[k], &used));
          (k == 0 ? r.path_id : k == 1 ? r.length : r.diversity) = v;
        }
        if (used != f[k].size()) throw std::invalid_argument(f[k]);
      } catch (const std::exception&) {
        throw ParseError(lineno, names[k], "cannot parse '" + f[k] + "'");
      }
    }
    if (r.diversity == 0 || r.diversity > r.length) {
      throw ParseError(lineno, "diversity", "must satisfy 1 <= diversity <= length");
    }
    if (f.size() == 5 && !f[4].empty()) {
      std::stringstream cs(f[4]);
      while (std::getline(cs, cell, ';')) {
        try {
          r.categories.push_back(std::stoi(cell));
        } catch (const std::exception&) {
          throw ParseError(lineno, "categories", "cannot parse '" + cell + "'");
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cge
