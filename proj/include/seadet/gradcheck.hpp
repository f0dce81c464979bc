#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "seadet/autodiff.hpp"

namespace seadet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::int64_t entries_checked = 0;
  bool ok = true;
  std::string worst;  // "<param>[i] analytic=.. numeric=.." for the worst entry

  std::string str() const {
    std::ostringstream os;
    os << (ok ? "OK" : "FAIL") << " max_rel_err=" << max_rel_err << " over "
       << entries_checked << " entries";
    if (!worst.empty()) os << " (worst: " << worst << ")";
    return os.str();
  }
};

// Central-difference check of reverse-mode gradients. `build_loss` must
// construct the loss graph on the given tape from the parameters' current
// values; it is re-run forward-only for each probe. Relative error uses
// max(|analytic|, |numeric|, 1) in the denominator so near-zero gradients
// compare absolutely.
template <class S, class BuildLoss>
GradCheckReport check_gradients(std::vector<ParameterT<S>*> params, BuildLoss build_loss,
                                double h = 1e-5, double tol = 1e-4,
                                std::int64_t max_entries_per_param = -1) {
  for (auto* p : params) p->reset_gradient();
  {
    TapeT<S> tape;
    VarT<S> loss = build_loss(tape);
    tape.backward(loss);
  }
  auto eval = [&]() -> double {
    TapeT<S> tape;
    tape.set_grad_enabled(false);
    VarT<S> loss = build_loss(tape);
    return static_cast<double>(tape.value(loss)[0]);
  };
  GradCheckReport rep;
  for (auto* p : params) {
    const std::int64_t n = p->value.numel();
    std::int64_t step = 1;
    if (max_entries_per_param > 0 && n > max_entries_per_param)
      step = (n + max_entries_per_param - 1) / max_entries_per_param;
    for (std::int64_t i = 0; i < n; i += step) {
      const S saved = p->value[i];
      p->value[i] = saved + static_cast<S>(h);
      const double fp = eval();
      p->value[i] = saved - static_cast<S>(h);
      const double fm = eval();
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = static_cast<double>(p->gradient[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
      const double rel = std::abs(analytic - numeric) / denom;
      ++rep.entries_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        std::ostringstream os;
        os << p->name << '[' << i << "] analytic=" << analytic << " numeric=" << numeric;
        rep.worst = os.str();
      }
    }
  }
  rep.ok = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace seadet
