#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cge/error.hpp"
#include "cge/tensor.hpp"

namespace cge {

/// The two disjoint parameter families of the bi-level problem: the inner
/// parameters (embedding tables and supervised head) and the re-weighting model.
enum class Family { Alpha, WeightModel };

inline const char* to_string(Family f) { return f == Family::Alpha ? "alpha" : "weight"; }

using ParamId = std::size_t;

class ParamStore {
 public:
  ParamId add(std::string name, Family family, Tensor init) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
    const ParamId id = entries_.size();
    index_.emplace(name, id);
    Tensor grad(init.rows(), init.cols());
    entries_.push_back({std::move(name), family, std::move(init), std::move(grad)});
    return id;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  Family family(ParamId id) const { return entries_.at(id).family; }
  Tensor& value(ParamId id) { return entries_.at(id).value; }
  const Tensor& value(ParamId id) const { return entries_.at(id).value; }
  Tensor& grad(ParamId id) { return entries_.at(id).grad; }
  const Tensor& grad(ParamId id) const { return entries_.at(id).grad; }

  std::vector<ParamId> ids(Family family) const {
    std::vector<ParamId> out;
    for (ParamId i = 0; i < entries_.size(); ++i) {
      if (entries_[i].family == family) out.push_back(i);
    }
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  std::vector<Tensor> snapshot(Family family) const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) {
      if (e.family == family) out.push_back(e.value);
    }
    return out;
  }

  std::vector<Tensor> grad_snapshot(Family family) const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) {
      if (e.family == family) out.push_back(e.grad);
    }
    return out;
  }

  void restore(Family family, const std::vector<Tensor>& values) {
    std::size_t k = 0;
    for (auto& e : entries_) {
      if (e.family != family) continue;
      if (k >= values.size() || !values[k].same_shape(e.value)) {
        throw ShapeError("restore: snapshot does not match family " +
                         std::string(to_string(family)));
      }
      e.value = values[k++];
    }
    if (k != values.size()) throw ShapeError("restore: snapshot has extra tensors");
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.family != y.family || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  struct Entry {
    std::string name;
    Family family;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
  std::map<std::string, ParamId> index_;
};

/// p <- p - lr * g, elementwise.
inline void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  if (!param.same_shape(grad)) {
    throw ShapeError("sgd_step: param " + param.shape_string() + " vs grad " +
                     grad.shape_string());
  }
  auto p = param.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

inline void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: family size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) sgd_step(params[i], grads[i], lr);
}

/// Applies the stored gradients of one family.
inline void sgd_step(ParamStore& store, Family family, double lr) {
  for (ParamId id : store.ids(family)) sgd_step(store.value(id), store.grad(id), lr);
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <class Rng>
Tensor uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Checkpoint container: a text header listing (name, family, rows, cols) per
// tensor, terminated by "end\n", followed by the raw little-endian float64
// payload of every tensor in header order.

namespace detail {
inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const ParamStore& store) {
  out << "cge-checkpoint 1\n" << "params " << store.size() << "\n";
  for (ParamId i = 0; i < store.size(); ++i) {
    out << store.name(i) << ' ' << to_string(store.family(i)) << ' ' << store.value(i).rows()
        << ' ' << store.value(i).cols() << '\n';
  }
  out << "end\n";
  for (ParamId i = 0; i < store.size(); ++i) {
    for (double v : store.value(i).values()) {
      const std::uint64_t bits = detail::to_le(std::bit_cast<std::uint64_t>(v));
      char buf[8];
      std::memcpy(buf, &bits, 8);
      out.write(buf, 8);
    }
  }
  if (!out) throw Error("checkpoint write failed");
}

inline ParamStore read_checkpoint(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(lineno + 1, what, "unexpected end of file");
    ++lineno;
  };
  next_line("magic");
  if (line != "cge-checkpoint 1") throw ParseError(lineno, "magic", "not a checkpoint");
  next_line("params");
  std::size_t count = 0;
  {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag >> count) || tag != "params") {
      throw ParseError(lineno, "params", "expected 'params <count>'");
    }
  }
  struct Header {
    std::string name;
    Family family;
    std::size_t rows, cols;
  };
  std::vector<Header> headers;
  for (std::size_t i = 0; i < count; ++i) {
    next_line("tensor");
    std::istringstream ss(line);
    Header h;
    std::string fam;
    if (!(ss >> h.name >> fam >> h.rows >> h.cols)) {
      throw ParseError(lineno, "tensor", "expected '<name> <family> <rows> <cols>'");
    }
    if (fam == "alpha") {
      h.family = Family::Alpha;
    } else if (fam == "weight") {
      h.family = Family::WeightModel;
    } else {
      throw ParseError(lineno, "family", "unknown family '" + fam + "'");
    }
    headers.push_back(std::move(h));
  }
  next_line("end");
  if (line != "end") throw ParseError(lineno, "end", "expected 'end'");

  ParamStore store;
  for (auto& h : headers) {
    std::vector<double> vals(h.rows * h.cols);
    for (auto& v : vals) {
      char buf[8];
      if (!in.read(buf, 8)) throw Error("checkpoint payload truncated in '" + h.name + "'");
      std::uint64_t bits;
      std::memcpy(&bits, buf, 8);
      v = std::bit_cast<double>(detail::to_le(bits));
    }
    store.add(h.name, h.family, Tensor(h.rows, h.cols, std::move(vals)));
  }
  return store;
}

}  // namespace cge
