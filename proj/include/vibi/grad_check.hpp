#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vibi/graph.hpp"
#include "vibi/tensor.hpp"

namespace vibi {

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  // Coordinates within h of a non-differentiable point; excluded, not failed.
  std::vector<std::size_t> skipped;
  std::string diagnostic;
};

/// Compares reverse-mode gradients against central differences.
///
/// `build` is a generic callable `(Graph<U>&, Var<U> x) -> Var<U>` returning a
/// scalar. It is run in `Precision` for the analytic gradient and always in
/// 64-bit for the finite differences (the shadow evaluation). Error per
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// A coordinate counts as a kink when the gap between one-sided slopes does
/// not halve with the step (off by more than tol) or the central differences
/// at h and h/2 disagree by more than tol / 10; such coordinates are listed in
/// `skipped`.
template <typename Precision = float, typename Builder>
GradCheckReport grad_check(Builder&& build, const Tensor64& x, double h, double tol) {
  VIBI_REQUIRE(h > 0.0, "grad_check: step must be positive");
  GradCheckReport report;

  Graph<Precision> g;
  auto xv = g.leaf(x.template cast<Precision>());
  auto y = build(g, xv);
  if (!std::isfinite(static_cast<double>(y.value().item()))) {
    report.passed = false;
    report.diagnostic = "non-finite forward value at base point";
    return report;
  }
  g.backward(y);
  const auto analytic = g.grad(xv).template cast<double>();

  auto eval = [&](std::size_t i, double delta) {
    Tensor64 xp = x;
    xp[i] += delta;
    Graph<double> gd;
    auto v = build(gd, gd.leaf(std::move(xp)));
    return v.value().item();
  };
  const double f0 = [&] {
    Graph<double> gd;
    return build(gd, gd.leaf(x)).value().item();
  }();

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fp = eval(i, h), fm = eval(i, -h);
    const double fp2 = eval(i, h / 2), fm2 = eval(i, -h / 2);
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(fp2) || !std::isfinite(fm2)) {
      report.passed = false;
      report.worst_index = i;
      report.diagnostic = "non-finite forward value perturbing coordinate " + std::to_string(i);
      return report;
    }
    const double central = (fp - fm) / (2 * h);
    const double central2 = (fp2 - fm2) / h;
    // Smooth f: the one-sided slope gap is linear in the step, so the gap at
    // h is twice the gap at h/2.
    const double gap = (fp - f0) / h - (f0 - fm) / h;
    const double gap2 = (fp2 - f0) / (h / 2) - (f0 - fm2) / (h / 2);
    const double scale = std::max(1.0, std::abs(central));
    if (std::abs(gap - 2 * gap2) > tol * scale || std::abs(central - central2) > tol / 10 * scale) {
      report.skipped.push_back(i);
      continue;
    }
    const double a = analytic[i];
    const double err = std::abs(a - central) / std::max({1.0, std::abs(a), std::abs(central)});
    ++report.checked;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  if (report.max_rel_error >= tol) {
    report.passed = false;
    report.diagnostic = "coordinate " + std::to_string(report.worst_index) + " rel. error " +
                        std::to_string(report.max_rel_error);
  }
  return report;
}

}  // namespace vibi
