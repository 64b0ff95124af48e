#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "vibi/ops.hpp"

namespace vibi {

/// KL(p || uniform over d) = sum_j p_j log(p_j d) = log d - H(p), with 0 log 0 = 0.
inline double kl_to_uniform(std::span<const double> p, double tol = 1e-5) {
  VIBI_REQUIRE(!p.empty(), "kl_to_uniform: empty distribution");
  double total = 0.0;
  for (auto v : p) {
    VIBI_REQUIRE(v >= 0.0, "kl_to_uniform: negative probability");
    total += v;
  }
  VIBI_REQUIRE(std::abs(total - 1.0) <= tol, "kl_to_uniform: probabilities do not sum to 1");
  const double d = static_cast<double>(p.size());
  double kl = 0.0;
  for (auto v : p) {
    if (v > 0.0) kl += v * std::log(v * d);
  }
  return std::max(kl, 0.0);
}

/// Per-row KL to the uniform prior from explainer log-probabilities [n, d]; returns [n].
template <typename T>
Var<T> kl_to_uniform(Var<T> log_p) {
  VIBI_REQUIRE(log_p.value().rank() == 2, "kl_to_uniform: expected [n, d] log-probabilities");
  const std::size_t d = log_p.shape()[1];
  auto terms = mul(exp(log_p), add_scalar(log_p, static_cast<T>(std::log(static_cast<double>(d)))));
  return scale(mean(terms, 1), static_cast<T>(d));
}

/// Minimisation form of the bound: total = nll + beta * kl.
struct LossTerms {
  double nll = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

template <typename T>
struct Loss {
  Var<T> total;
  LossTerms terms;
};

/// Cross-entropy of the approximator against black-box labels, averaged over
/// all n*L rows. This alone is the L2X objective.
template <typename T>
Var<T> approximator_nll(Var<T> approx_log_probs, std::span<const std::size_t> targets) {
  return mean_all(nll_pick(approx_log_probs, targets));
}

/// Soft-label variant: -sum_c target_c log q_c, averaged over rows.
template <typename T>
Var<T> approximator_soft_nll(Var<T> approx_log_probs, const BasicTensor<T>& target_probs) {
  VIBI_REQUIRE(target_probs.shape() == approx_log_probs.shape(), "soft nll: target shape mismatch");
  auto& g = *approx_log_probs.graph;
  const T classes = static_cast<T>(target_probs.shape().back());
  auto ce = scale(mean(mul(g.constant(target_probs), approx_log_probs), 1), -classes);
  return mean_all(ce);
}

/// approx_log_probs: [n*L, C] rows from masked inputs, targets: one label per
/// row, explainer_log_probs: [n, d]. Requires (n*L) % n == 0.
template <typename T>
Loss<T> vibi_loss(Var<T> approx_log_probs, std::span<const std::size_t> targets, Var<T> explainer_log_probs,
                  double beta) {
  VIBI_REQUIRE(beta >= 0.0, "vibi_loss: beta must be non-negative");
  VIBI_REQUIRE(explainer_log_probs.value().rank() == 2 && approx_log_probs.value().rank() == 2,
               "vibi_loss: expected rank-2 inputs");
  const std::size_t n = explainer_log_probs.shape()[0];
  VIBI_REQUIRE(approx_log_probs.shape()[0] % n == 0, "vibi_loss: approximator rows must be a multiple of n");
  auto nll = approximator_nll(approx_log_probs, targets);
  auto kl = mean_all(kl_to_uniform(explainer_log_probs));
  auto total = add(nll, scale(kl, static_cast<T>(beta)));
  LossTerms terms{nll.value().item(), kl.value().item(), beta, 0.0};
  terms.total = total.value().item();
  return {total, terms};
}

/// Plain-value form for a single batch of probabilities (no graph).
inline LossTerms vibi_loss(std::span<const double> approx_log_probs, std::size_t classes,
                           std::span<const std::size_t> targets, std::span<const double> explainer_probs,
                           std::size_t d, double beta) {
  VIBI_REQUIRE(beta >= 0.0, "vibi_loss: beta must be non-negative");
  VIBI_REQUIRE(classes > 0 && d > 0, "vibi_loss: empty class or chunk axis");
  VIBI_REQUIRE(approx_log_probs.size() == targets.size() * classes, "vibi_loss: one target per row required");
  VIBI_REQUIRE(explainer_probs.size() % d == 0 && !explainer_probs.empty(), "vibi_loss: explainer shape mismatch");
  const std::size_t rows = targets.size(), n = explainer_probs.size() / d;
  VIBI_REQUIRE(rows % n == 0, "vibi_loss: approximator rows must be a multiple of n");
  LossTerms t;
  t.beta = beta;
  for (std::size_t r = 0; r < rows; ++r) {
    VIBI_REQUIRE(targets[r] < classes, "vibi_loss: target out of range");
    t.nll -= approx_log_probs[r * classes + targets[r]];
  }
  t.nll /= static_cast<double>(rows);
  for (std::size_t i = 0; i < n; ++i) {
    t.kl += kl_to_uniform(explainer_probs.subspan(i * d, d));
  }
  t.kl /= static_cast<double>(n);
  t.total = t.nll + beta * t.kl;
  return t;
}

}  // namespace vibi
