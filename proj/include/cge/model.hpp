#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "cge/error.hpp"
#include "cge/params.hpp"
#include "cge/reweight.hpp"

namespace cge {

enum class Mode { Transductive, Inductive };

inline const char* to_string(Mode m) {
  return m == Mode::Transductive ? "transductive" : "inductive";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "transductive") return Mode::Transductive;
  if (s == "inductive") return Mode::Inductive;
  throw ConfigError("unknown mode '" + s + "'");
}

struct ModelSpec {
  Mode mode = Mode::Transductive;
  Variant variant = Variant::Lstm;
  std::size_t nodes = 0;
  std::size_t embed_dim = 16;
  std::size_t feature_dim = 0;
  std::size_t classes = 0;
  /// Width of the transductive feature/embedding layers before concatenation.
  std::size_t head_dim = 64;
  /// 0 means "same as embed_dim".
  std::size_t lstm_hidden = 0;
};

namespace param_names {
inline const std::string kInputTable = "alpha.w";
inline const std::string kOutputTable = "alpha.e";
// transductive head: softmax(out([tanh(hk x) | tanh(hl e)]))
inline const std::string kHkW = "theta.hk.W";
inline const std::string kHkB = "theta.hk.b";
inline const std::string kHlW = "theta.hl.W";
inline const std::string kHlB = "theta.hl.b";
inline const std::string kOutW = "theta.out.W";
inline const std::string kOutB = "theta.out.b";
// inductive head: softmax(h([x | tanh(emb x)]))
inline const std::string kEmbW = "theta.emb.W";
inline const std::string kEmbB = "theta.emb.b";
inline const std::string kHW = "theta.h.W";
inline const std::string kHB = "theta.h.b";
}  // namespace param_names

/// Parameters of one CGE model: the alpha family (input table w, output
/// table e, supervised head theta) and the re-weighting family w_A.
struct Model {
  ModelSpec spec;
  ParamStore store;
  WeightModelParams weight_model;

  static Model init(const ModelSpec& spec, std::uint64_t seed) {
    namespace n = param_names;
    if (spec.nodes == 0 || spec.embed_dim == 0 || spec.classes == 0) {
      throw ConfigError("model needs nodes, embedding size and classes > 0");
    }
    Model m;
    m.spec = spec;
    std::mt19937_64 rng(seed);
    const std::size_t k = spec.nodes, d = spec.embed_dim, dx = spec.feature_dim,
                      c = spec.classes, dh = spec.head_dim;
    m.store.add(n::kInputTable, Family::Alpha, uniform_init(k, d, d, rng));
    m.store.add(n::kOutputTable, Family::Alpha, uniform_init(k, d, d, rng));
    if (spec.mode == Mode::Transductive) {
      m.store.add(n::kHkW, Family::Alpha, uniform_init(dx, dh, dx, rng));
      m.store.add(n::kHkB, Family::Alpha, uniform_init(1, dh, dx, rng));
      m.store.add(n::kHlW, Family::Alpha, uniform_init(d, dh, d, rng));
      m.store.add(n::kHlB, Family::Alpha, uniform_init(1, dh, d, rng));
      m.store.add(n::kOutW, Family::Alpha, uniform_init(2 * dh, c, 2 * dh, rng));
      m.store.add(n::kOutB, Family::Alpha, uniform_init(1, c, 2 * dh, rng));
    } else {
      m.store.add(n::kEmbW, Family::Alpha, uniform_init(dx, d, dx, rng));
      m.store.add(n::kEmbB, Family::Alpha, uniform_init(1, d, dx, rng));
      m.store.add(n::kHW, Family::Alpha, uniform_init(dx + d, c, dx + d, rng));
      m.store.add(n::kHB, Family::Alpha, uniform_init(1, c, dx + d, rng));
    }
    m.weight_model = register_weight_model(m.store, spec.variant, d, spec.lstm_hidden, rng);
    return m;
  }

  const Tensor& input_table() const { return store.value(store.id(param_names::kInputTable)); }
  const Tensor& output_table() const { return store.value(store.id(param_names::kOutputTable)); }
};

}  // namespace cge
