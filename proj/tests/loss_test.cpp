#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cge/gradcheck.hpp"
#include "cge/loss.hpp"
#include "support.hpp"

using namespace cge;
namespace t = cge::testing;
namespace pn = cge::param_names;

namespace {

Model toy_model(Mode mode, Variant v, const Graph& g, std::uint64_t seed, std::size_t d = 3) {
  ModelSpec spec;
  spec.mode = mode;
  spec.variant = v;
  spec.nodes = g.node_count();
  spec.embed_dim = d;
  spec.feature_dim = g.feature_dim();
  spec.classes = g.num_classes();
  spec.head_dim = 4;
  return Model::init(spec, seed);
}

UnsupBatch batch_of(std::vector<SubPath> paths) {
  UnsupBatch b;
  b.negatives.resize(paths.size());
  b.paths = std::move(paths);
  return b;
}

}  // namespace

TEST(SkipGram, TwoIdenticalEmbeddingsGiveLogTwo) {
  Tensor e(2, 3, 0.7);
  const std::vector<double> w{0.7, 0.7, 0.7};
  EXPECT_NEAR(skipgram_loss(w, 1, e), std::log(2.0), 1e-15);
}

TEST(SkipGram, SingleNodeIsZero) {
  Tensor e(1, 2, std::vector<double>{3.0, -1.0});
  EXPECT_EQ(skipgram_loss(std::vector<double>{0.5, 2.0}, 0, e), 0.0);
}

TEST(SkipGram, MatchesDirectSummation) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor w = t::random_tensor(4, 5, rng);
    Tensor e = t::random_tensor(4, 5, rng);
    for (NodeId i = 0; i < 4; ++i)
      for (NodeId j = 0; j < 4; ++j) {
        EXPECT_NEAR(skipgram_loss(w.row_span(i), j, e), t::skipgram_oracle(w, i, e, j), 1e-12);
      }
  }
}

TEST(NegativeSampling, ZeroEmbeddingsGiveTwoLogTwo) {
  Tensor e(3, 2, 0.0);
  EXPECT_NEAR(skipgram_loss_negative(std::vector<double>{0, 0}, 1, {2}, e), 2.0 * std::log(2.0),
              1e-15);
}

TEST(NegativeSampling, SaturatedPositiveLeavesLogTwo) {
  // e_j . w_i = 50 and the negative is orthogonal.
  Tensor e(3, 2, std::vector<double>{0, 0, 50, 0, 0, 1});
  EXPECT_NEAR(skipgram_loss_negative(std::vector<double>{1, 0}, 1, {2}, e), std::log(2.0), 1e-15);
}

TEST(NegativeSampling, MatchesStraightLineFormula) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor w = t::random_tensor(1, 4, rng);
    Tensor e = t::random_tensor(6, 4, rng);
    const std::vector<NodeId> negs{0, 3, 5};
    double oracle = -std::log(t::sig(t::dot_rows(w, 0, e, 2)));
    for (NodeId n : negs) oracle -= std::log(t::sig(-t::dot_rows(w, 0, e, n)));
    EXPECT_NEAR(skipgram_loss_negative(w.row_span(0), 2, negs, e), oracle, 1e-12);
  }
}

TEST(NegativeSampling, DrawsExcludeTarget) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    for (NodeId n : draw_negatives(4, 2, 5, rng)) {
      EXPECT_NE(n, 2u);
      EXPECT_LT(n, 4u);
    }
  }
  EXPECT_THROW(draw_negatives(1, 0, 1, rng), ConfigError);
}

TEST(UnsupLoss, PinnedWeightsEqualPlainSkipGram) {
  Graph g = t::toy_graph(8, 2, 3, 1);
  Model m = toy_model(Mode::Transductive, Variant::Fixed, g, 2);
  const PairCorpus corpus = build_corpus(g, 2, 6, 3, 3, 4);
  UnsupBatch b = batch_of(corpus.samples);
  ad::Tape tape(m.store);
  const double got = unsup_loss(tape, m, b, {}).value().item();
  double oracle = 0.0;
  for (const auto& sp : b.paths) {
    oracle += t::skipgram_oracle(m.input_table(), sp.start(), m.output_table(), sp.end());
  }
  EXPECT_NEAR(got, oracle, 1e-12 * std::max(1.0, oracle));
}

TEST(UnsupLoss, SingleFixedPairIdenticalEmbeddings) {
  Graph g = t::make_graph(2, {{0, 1}}, 1, 1);
  Model m = toy_model(Mode::Transductive, Variant::Lstm, g, 1);
  m.store.value(m.store.id(pn::kInputTable)).fill(0.4);
  m.store.value(m.store.id(pn::kOutputTable)).fill(0.4);
  ad::Tape tape(m.store);
  const double got = unsup_loss(tape, m, batch_of({{{0, 1}, true}}), {}).value().item();
  EXPECT_NEAR(got, std::log(2.0), 1e-15);
}

TEST(UnsupLoss, TermByTermOracle) {
  Graph g = t::toy_graph(7, 2, 2, 3);
  for (Variant v : {Variant::Average, Variant::Cnn, Variant::Lstm}) {
    Model m = toy_model(Mode::Transductive, v, g, 5);
    std::vector<SubPath> paths = {{{0, 1, 2}, false}, {{3, 4}, false}, {{6, 5}, true}};
    UnsupBatch b = batch_of(paths);
    ad::Tape tape(m.store);
    const double got = unsup_loss(tape, m, b, {}).value().item();
    double oracle = 0.0;
    for (const auto& sp : paths) {
      const double a = weight(sp, m.input_table(), m.store, m.weight_model);
      oracle += a * t::skipgram_oracle(m.input_table(), sp.start(), m.output_table(), sp.end());
    }
    EXPECT_NEAR(got, oracle, 1e-12) << to_string(v);
  }
}

TEST(UnsupLoss, EmptyBatchRejected) {
  Graph g = t::toy_graph(4, 2, 2, 1);
  Model m = toy_model(Mode::Transductive, Variant::Lstm, g, 1);
  ad::Tape tape(m.store);
  EXPECT_THROW(unsup_loss(tape, m, UnsupBatch{}, {}), ConfigError);
}

TEST(UnsupLoss, FixedPairsGiveZeroWeightModelGradient) {
  Graph g = t::toy_graph(6, 2, 2, 3);
  Model m = toy_model(Mode::Transductive, Variant::Lstm, g, 5);
  ad::Tape tape(m.store);
  tape.backward(unsup_loss(tape, m, batch_of({{{0, 1}, true}, {{2, 4}, true}}), {}));
  for (const Tensor& gr : m.store.grad_snapshot(Family::WeightModel)) {
    for (double x : gr.values()) EXPECT_EQ(x, 0.0);
  }
}

TEST(SupLoss, UniformPredictorGivesLogC) {
  Graph g = t::toy_graph(6, 3, 2, 1);
  for (Mode mode : {Mode::Transductive, Mode::Inductive}) {
    Model m = toy_model(mode, Variant::Lstm, g, 1);
    for (ParamId id : m.store.ids(Family::Alpha)) {
      if (m.store.name(id).rfind("theta.", 0) == 0) m.store.value(id).fill(0.0);
    }
    const std::vector<NodeId> nodes{0, 1, 2, 3};
    ad::Tape tape(m.store);
    EXPECT_NEAR(sup_loss(tape, m, g, nodes).value().item(), 4.0 * std::log(3.0), 1e-12);
  }
}

TEST(SupLoss, InductiveZeroFeaturesZeroBiasesIsUniform) {
  GraphData d;
  d.num_classes = 4;
  d.features = Tensor(3, 5, 0.0);
  d.labels = {0, 1, 3};
  d.splits = {Split::Train, Split::Train, Split::Train};
  Graph g = Graph::from_edges(d);
  Model m = toy_model(Mode::Inductive, Variant::Lstm, g, 7);
  m.store.value(m.store.id(pn::kEmbB)).fill(0.0);
  m.store.value(m.store.id(pn::kHB)).fill(0.0);
  const std::vector<NodeId> nodes{0, 1, 2};
  ad::Tape tape(m.store);
  EXPECT_NEAR(sup_loss(tape, m, g, nodes).value().item(), 3.0 * std::log(4.0), 1e-12);
}

TEST(SupLoss, SaturatedCorrectPredictionIsZero) {
  Graph g = t::toy_graph(6, 2, 2, 1);
  Model m = toy_model(Mode::Transductive, Variant::Lstm, g, 1);
  m.store.value(m.store.id(pn::kOutW)).fill(0.0);
  // Node 1 has label 1: logits (0, 50).
  m.store.value(m.store.id(pn::kOutB)) = Tensor::row({0.0, 50.0});
  const std::vector<NodeId> nodes{1};
  ad::Tape tape(m.store);
  EXPECT_LT(sup_loss(tape, m, g, nodes).value().item(), 1e-20);
}

TEST(SupLoss, TransductiveMatchesHandRolledForward) {
  Graph g = t::toy_graph(6, 2, 3, 4);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = toy_model(Mode::Transductive, Variant::Lstm, g, seed);
    const auto& s = m.store;
    const Tensor &hkW = s.value(s.id(pn::kHkW)), &hkB = s.value(s.id(pn::kHkB));
    const Tensor &hlW = s.value(s.id(pn::kHlW)), &hlB = s.value(s.id(pn::kHlB));
    const Tensor &oW = s.value(s.id(pn::kOutW)), &oB = s.value(s.id(pn::kOutB));
    const Tensor& e = m.output_table();
    double oracle = 0.0;
    const std::vector<NodeId> nodes{0, 1, 2, 3, 4, 5};
    for (NodeId i : nodes) {
      std::vector<double> hidden;
      for (std::size_t k = 0; k < hkW.cols(); ++k) {
        double z = hkB[k];
        for (std::size_t j = 0; j < g.feature_dim(); ++j) z += g.feature_row(i)[j] * hkW(j, k);
        hidden.push_back(std::tanh(z));
      }
      for (std::size_t k = 0; k < hlW.cols(); ++k) {
        double z = hlB[k];
        for (std::size_t j = 0; j < e.cols(); ++j) z += e(i, j) * hlW(j, k);
        hidden.push_back(std::tanh(z));
      }
      std::vector<double> logits;
      for (std::size_t c = 0; c < 2; ++c) {
        double z = oB[c];
        for (std::size_t k = 0; k < hidden.size(); ++k) z += hidden[k] * oW(k, c);
        logits.push_back(z);
      }
      oracle -= std::log(t::softmax_row(logits)[g.label(i)]);
    }
    ad::Tape tape(m.store);
    EXPECT_NEAR(sup_loss_transductive(tape, m, g, nodes).value().item(), oracle, 1e-12);
  }
}

TEST(SupLoss, InductiveMatchesHandRolledForward) {
  Graph g = t::toy_graph(6, 3, 4, 2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = toy_model(Mode::Inductive, Variant::Average, g, seed);
    const auto& s = m.store;
    const Tensor &eW = s.value(s.id(pn::kEmbW)), &eB = s.value(s.id(pn::kEmbB));
    const Tensor &hW = s.value(s.id(pn::kHW)), &hB = s.value(s.id(pn::kHB));
    double oracle = 0.0;
    const std::vector<NodeId> nodes{0, 2, 5};
    for (NodeId i : nodes) {
      std::vector<double> in(g.feature_row(i).begin(), g.feature_row(i).end());
      for (std::size_t k = 0; k < eW.cols(); ++k) {
        double z = eB[k];
        for (std::size_t j = 0; j < g.feature_dim(); ++j) z += g.feature_row(i)[j] * eW(j, k);
        in.push_back(std::tanh(z));
      }
      std::vector<double> logits;
      for (std::size_t c = 0; c < 3; ++c) {
        double z = hB[c];
        for (std::size_t k = 0; k < in.size(); ++k) z += in[k] * hW(k, c);
        logits.push_back(z);
      }
      oracle -= std::log(t::softmax_row(logits)[g.label(i)]);
    }
    ad::Tape tape(m.store);
    EXPECT_NEAR(sup_loss_inductive(tape, m, g, nodes).value().item(), oracle, 1e-12);
  }
}

TEST(SupLoss, UnlabeledNodeRejected) {
  Graph g = t::make_graph(3, {{0, 1}}, 2, 2);
  Model m = toy_model(Mode::Transductive, Variant::Lstm, g, 1);
  const std::vector<NodeId> nodes{0};
  ad::Tape tape(m.store);
  EXPECT_THROW(sup_loss(tape, m, g, nodes), GraphError);
}

TEST(SupLoss, ModeMismatchAndFeatureDimension) {
  Graph g = t::toy_graph(6, 2, 3, 4);
  Model m = toy_model(Mode::Inductive, Variant::Lstm, g, 1);
  const std::vector<NodeId> nodes{1};
  ad::Tape tape(m.store);
  EXPECT_THROW(sup_loss_transductive(tape, m, g, nodes), ConfigError);
  Graph other = t::toy_graph(6, 2, 5, 4);
  EXPECT_THROW(sup_loss_inductive(tape, m, other, nodes), ShapeError);
}

TEST(SupLoss, PredictionsSumToOne) {
  Graph g = t::toy_graph(9, 3, 2, 4);
  Model m = toy_model(Mode::Transductive, Variant::Lstm, g, 1);
  const std::vector<NodeId> nodes{0, 1, 2, 3, 4, 5, 6, 7, 8};
  ad::Tape tape(m.store);
  const Tensor& p = ad::softmax(class_logits(tape, m, g, nodes)).value();
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row_span(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SemiLoss, Composition) {
  Graph g = t::toy_graph(8, 2, 3, 9);
  Model m = toy_model(Mode::Transductive, Variant::Cnn, g, 3);
  const auto sup = g.train_nodes();
  UnsupBatch b = batch_of({{{0, 1, 2}, false}, {{4, 5}, false}, {{1, 4}, true}});
  auto value = [&](auto&& fn) {
    ad::Tape tape(m.store);
    return fn(tape).value().item();
  };
  const double ls = value([&](ad::Tape& tp) { return sup_loss(tp, m, g, sup); });
  const double lu = value([&](ad::Tape& tp) { return unsup_loss(tp, m, b, {}); });
  EXPECT_EQ(value([&](ad::Tape& tp) { return semi_loss(tp, m, g, sup, b, {0.0}); }), ls);
  EXPECT_NEAR(value([&](ad::Tape& tp) { return semi_loss(tp, m, g, {}, b, {0.7}); }), 0.7 * lu,
              1e-12);
  EXPECT_NEAR(value([&](ad::Tape& tp) { return semi_loss(tp, m, g, sup, b, {0.5}); }),
              ls + 0.5 * lu, 1e-12);
  ad::Tape tape(m.store);
  EXPECT_THROW(semi_loss(tape, m, g, sup, b, {-1.0}), ConfigError);
}

TEST(Losses, NonNegative) {
  Graph g = t::toy_graph(10, 2, 3, 2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = toy_model(Mode::Transductive, Variant::Lstm, g, seed);
    t::randomize(m.store, seed, 1.0);
    const PairCorpus corpus = build_corpus(g, 1, 5, 3, 2, seed);
    std::mt19937_64 rng(seed);
    UnsupBatch full = sample_unsup_batch(corpus, 20, 0, 10, rng);
    UnsupBatch neg = sample_unsup_batch(corpus, 20, 3, 10, rng);
    ad::Tape tape(m.store);
    EXPECT_GE(unsup_loss(tape, m, full, {}).value().item(), 0.0);
    EXPECT_GE(unsup_loss(tape, m, neg, {1.0, 3}).value().item(), 0.0);
    EXPECT_GE(sup_loss(tape, m, g, g.train_nodes()).value().item(), 0.0);
  }
}

// Plain gradient descent on a 10-node corpus, weights pinned.
TEST(Losses, FullAndNegativeSamplingDecrease) {
  Graph g = t::toy_graph(10, 2, 2, 5);
  const PairCorpus corpus = build_corpus(g, 2, 6, 3, 0, 5);
  for (std::size_t negs : {0u, 3u}) {
    Model m = toy_model(Mode::Transductive, Variant::Fixed, g, 2, 4);
    std::mt19937_64 rng(11);
    UnsupBatch b = sample_unsup_batch(corpus, 64, negs, 10, rng);
    std::vector<double> trace;
    for (int step = 0; step < 100; ++step) {
      ad::Tape tape(m.store);
      ad::Var l = unsup_loss(tape, m, b, {1.0, negs});
      trace.push_back(l.value().item());
      tape.backward(l);
      sgd_step(m.store, Family::Alpha, 0.01);
    }
    int rises = 0;
    for (std::size_t k = 1; k < trace.size(); ++k) rises += trace[k] > trace[k - 1];
    EXPECT_LE(rises, 5) << negs;
    EXPECT_LT(trace.back(), trace.front());
  }
}
