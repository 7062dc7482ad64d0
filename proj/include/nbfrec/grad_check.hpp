#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nbfrec/param_store.hpp"

namespace nbfrec {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Central-difference check of analytic gradients over every coordinate of
/// every parameter in the given stores.
///
/// value_fn  — deterministic forward pass, returns the scalar loss.
/// grad_fn   — same pass plus backward; must accumulate into store grads.
///
/// Relative error uses a scale floor so coordinates whose true gradient is
/// below `floor` are effectively compared absolutely; this keeps the
/// truncation noise of the finite differences from dominating.
template <class Real>
GradCheckReport grad_check(const std::function<double()>& value_fn,
                           const std::function<void()>& grad_fn,
                           const std::vector<ParamStore<Real>*>& stores, double eps,
                           double floor = 1e-4) {
  for (ParamStore<Real>* s : stores) s->zero_grads();
  grad_fn();

  GradCheckReport report;
  for (ParamStore<Real>* store : stores) {
    for (auto& [name, entry] : *store) {
      for (std::size_t i = 0; i < entry.value.size(); ++i) {
        const Real saved = entry.value[i];
        entry.value[i] = saved + Real(eps);
        const double f_plus = value_fn();
        entry.value[i] = saved - Real(eps);
        const double f_minus = value_fn();
        entry.value[i] = saved;

        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double analytic = double(entry.grad[i]);
        const double scale = std::max({std::abs(numeric), std::abs(analytic), floor});
        const double rel = std::abs(numeric - analytic) / scale;
        ++report.coords_checked;
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_param = name;
          report.worst_index = i;
          report.worst_analytic = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace nbfrec
