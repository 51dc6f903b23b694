#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cge/autodiff.hpp"
#include "cge/params.hpp"

namespace cge {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Builds a scalar loss on a tape bound to the store.
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Gradient magnitudes below this are compared on an absolute scale.
  double abs_floor = 1e-5;
  std::optional<Family> family;
};

inline double evaluate_loss(const LossBuilder& f, ParamStore& store) {
  ad::Tape tape(store);
  return f(tape).value().item();
}

inline std::vector<Tensor> analytic_gradients(const LossBuilder& f, ParamStore& store) {
  ad::Tape tape(store);
  ad::Var loss = f(tape);
  tape.backward(loss);
  std::vector<Tensor> out;
  for (ParamId i = 0; i < store.size(); ++i) out.push_back(store.grad(i));
  return out;
}

/// Compares reverse-mode gradients with central differences, entry by entry.
/// Relative error of an entry is |a - n| / max(|a|, |n|, abs_floor).
inline GradCheckReport finite_diff_check(const LossBuilder& f, ParamStore& store,
                                         const GradCheckOptions& opt = {}) {
  const auto analytic = analytic_gradients(f, store);
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (ParamId id = 0; id < store.size(); ++id) {
    if (opt.family && store.family(id) != *opt.family) continue;
    GradCheckEntry entry{store.name(id)};
    Tensor& value = store.value(id);
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double saved = value[k];
      value[k] = saved + opt.step;
      const double up = evaluate_loss(f, store);
      value[k] = saved - opt.step;
      const double down = evaluate_loss(f, store);
      value[k] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[id][k];
      const double err = std::abs(a - numeric);
      const double rel = err / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      entry.max_abs_error = std::max(entry.max_abs_error, err);
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
      entry.max_abs_numeric = std::max(entry.max_abs_numeric, std::abs(numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cge
