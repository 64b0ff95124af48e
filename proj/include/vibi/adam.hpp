#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vibi/errors.hpp"
#include "vibi/nets.hpp"

namespace vibi {

struct AdamState {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam update over `params`, aligned with `grads`.
/// Moments are kept in double; parameters stay float.
inline void adam_step(std::span<NamedTensor> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  VIBI_REQUIRE(lr > 0.0, "adam: learning rate must be positive");
  VIBI_REQUIRE(params.size() == grads.size(), "adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != grads[i].shape()) {
      throw InvalidArgument("adam: gradient shape " + shape_str(grads[i].shape()) + " does not match parameter '" +
                            params[i].name + "' " + shape_str(params[i].value.shape()));
    }
    for (std::size_t e = 0; e < grads[i].size(); ++e) {
      if (!std::isfinite(grads[i][e])) {
        throw NumericError("adam: non-finite gradient in parameter '" + params[i].name + "' at element " +
                           std::to_string(e));
      }
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), 0.0);
      state.v.emplace_back(p.value.size(), 0.0);
    }
  }
  VIBI_REQUIRE(state.m.size() == params.size(), "adam: state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t), c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    VIBI_REQUIRE(m.size() == params[i].value.size(), "adam: moment buffer size mismatch for '" + params[i].name + "'");
    auto theta = params[i].value.data();
    for (std::size_t e = 0; e < m.size(); ++e) {
      const double g = grads[i][e];
      m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g;
      v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g * g;
      const double mhat = m[e] / c1, vhat = v[e] / c2;
      theta[e] = static_cast<float>(theta[e] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace vibi
