#include <gtest/gtest.h>

#include "cge/bilevel.hpp"
#include "cge/eval.hpp"
#include "support.hpp"

using namespace cge;

TEST(Score, PerfectPredictor) {
  const std::vector<int> y{0, 1, 2, 1};
  const auto r = score_predictions(y, y, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.at(1, 1), 2u);
}

TEST(Score, ConstantPredictorOnBalancedSet) {
  const std::vector<int> truth{0, 1, 0, 1, 1, 0};
  const std::vector<int> pred(6, 1);
  const auto r = score_predictions(pred, truth, 2);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.at(0, 1), 3u);
  EXPECT_EQ(r.at(0, 0), 0u);
}

TEST(Score, Errors) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(score_predictions(a, b, 2), ShapeError);
  EXPECT_THROW(score_predictions(std::vector<int>{}, std::vector<int>{}, 2), Error);
  EXPECT_THROW(score_predictions(std::vector<int>{2}, std::vector<int>{0}, 2), Error);
}

TEST(Evaluate, TrainedSbmMatchesConfusionRecount) {
  Graph g = generate_sbm(2, 50, 0.1, 0.01, 5, 8, 4);
  const PairCorpus corpus = build_corpus(g, CorpusConfig{}, 4);
  TrainConfig cfg;
  cfg.max_steps = 30;
  cfg.seed = 4;
  const TrainedModel tm = train(g, corpus, cfg);
  const auto rep = evaluate(tm.model, g);
  const auto test = g.test_nodes();
  const auto pred = predict(tm.model, g, test);
  std::size_t ok = 0;
  std::vector<std::size_t> conf(4, 0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    ok += pred[i] == g.label(test[i]);
    ++conf[static_cast<std::size_t>(g.label(test[i]) * 2 + pred[i])];
  }
  EXPECT_EQ(rep.total, test.size());
  EXPECT_EQ(rep.correct, ok);
  EXPECT_DOUBLE_EQ(rep.accuracy, static_cast<double>(ok) / static_cast<double>(test.size()));
  EXPECT_EQ(rep.confusion, conf);
}
