#pragma once

#include <span>
#include <string>
#include <vector>

#include "cge/error.hpp"
#include "cge/graph.hpp"
#include "cge/loss.hpp"
#include "cge/model.hpp"

namespace cge {

struct EvalReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  /// confusion[truth * classes + predicted]
  std::vector<std::size_t> confusion;
  std::size_t classes = 0;

  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return confusion[truth * classes + predicted];
  }
};

inline EvalReport score_predictions(std::span<const int> predicted, std::span<const int> truth,
                                    std::size_t classes) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("score_predictions: " + std::to_string(predicted.size()) +
                     " predictions for " + std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw Error("score_predictions: nothing to score");
  EvalReport r;
  r.classes = classes;
  r.total = truth.size();
  r.confusion.assign(classes * classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes ||
        static_cast<std::size_t>(p) >= classes) {
      throw Error("score_predictions: label out of range at index " + std::to_string(i));
    }
    ++r.confusion[static_cast<std::size_t>(t) * classes + static_cast<std::size_t>(p)];
    if (t == p) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

/// Accuracy of the supervised head's argmax on every node of `split`.
inline EvalReport evaluate(const Model& model, const Graph& g, Split split = Split::Test) {
  const auto nodes = g.nodes_in(split);
  if (nodes.empty()) throw Error(std::string("evaluate: no nodes in split '") + to_string(split) + "'");
  const std::vector<int> pred = predict(model, g, nodes);
  std::vector<int> truth;
  truth.reserve(nodes.size());
  for (NodeId n : nodes) truth.push_back(g.label(n));
  return score_predictions(pred, truth, g.num_classes());
}

}  // namespace cge
