#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "vibi/ops.hpp"
#include "vibi/rng.hpp"

namespace vibi {

/// Relaxed k-hot vector: elementwise max of k Concrete samples.
struct RelaxedMask {
  std::vector<float> values;
  std::size_t k = 0;
  double tau = 0.0;
};

/// Exact k-hot selection.
struct HardMask {
  std::vector<float> values;
  std::vector<std::size_t> selected;  // ascending
};

/// Standard Gumbel sample -log(-log u) for u in the open unit interval.
inline double gumbel(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw InvalidArgument("gumbel: uniform draw must lie in (0,1)");
  }
  return -std::log(-std::log(u));
}

inline double gumbel(RngStream& rng) { return gumbel(rng.uniform_open()); }

/// k noise tensors of shape [rows, d]; row r draws from rng_for_row(r), in
/// order sample 0..k-1, chunk 0..d-1.
template <typename T, typename RowRng>
std::vector<BasicTensor<T>> gumbel_noise(std::size_t rows, std::size_t d, std::size_t k, RowRng&& rng_for_row) {
  std::vector<BasicTensor<T>> noise(k, BasicTensor<T>(Shape{rows, d}));
  for (std::size_t r = 0; r < rows; ++r) {
    RngStream rng = rng_for_row(r);
    for (std::size_t l = 0; l < k; ++l) {
      for (std::size_t j = 0; j < d; ++j) {
        noise[l][r * d + j] = static_cast<T>(gumbel(rng));
      }
    }
  }
  return noise;
}

/// Concrete vector softmax((g + log_p) / tau) per row of [B,d] log-probabilities.
/// Entries are floored at the smallest normal T so they stay strictly positive
/// when exp underflows at low temperature.
template <typename T>
Var<T> concrete(Var<T> log_p, Var<T> g, T tau) {
  VIBI_REQUIRE(tau > T{0}, "concrete: temperature must be positive");
  auto c = exp(log_softmax(scale(add(log_p, g), T{1} / tau)));
  return maximum(c, log_p.graph->constant(BasicTensor<T>(c.shape(), std::numeric_limits<T>::min())));
}

/// z*_j = max_l c_j^(l) over one Concrete vector per noise tensor. Gradient
/// follows the argmax branch per coordinate, first sample on exact ties.
template <typename T>
Var<T> relaxed_topk(Var<T> log_p, std::span<const BasicTensor<T>> noise, T tau) {
  VIBI_REQUIRE(!noise.empty(), "relaxed_topk: k must be at least 1");
  const std::size_t d = log_p.shape().back();
  VIBI_REQUIRE(noise.size() <= d, "relaxed_topk: k exceeds the number of chunks");
  auto& g = *log_p.graph;
  Var<T> z = concrete(log_p, g.constant(noise[0]), tau);
  for (std::size_t l = 1; l < noise.size(); ++l) {
    z = maximum(z, concrete(log_p, g.constant(noise[l]), tau));
  }
  return z;
}

inline std::vector<double> concrete(std::span<const double> log_p, std::span<const double> g, double tau) {
  VIBI_REQUIRE(tau > 0.0, "concrete: temperature must be positive");
  VIBI_REQUIRE(!log_p.empty() && log_p.size() == g.size(), "concrete: length mismatch");
  for (auto v : log_p) VIBI_REQUIRE(std::isfinite(v), "concrete: log-probabilities must be finite");
  Graph<double> gr;
  const Shape s{1, log_p.size()};
  auto c = concrete(gr.constant(Tensor64(s, std::vector<double>(log_p.begin(), log_p.end()))),
                    gr.constant(Tensor64(s, std::vector<double>(g.begin(), g.end()))), tau);
  return {c.value().data().begin(), c.value().data().end()};
}

/// Draws k Concrete vectors from `rng` and returns their elementwise max.
inline RelaxedMask relaxed_topk(std::span<const float> log_p, std::size_t k, double tau, RngStream& rng) {
  const std::size_t d = log_p.size();
  VIBI_REQUIRE(k >= 1 && k <= d, "relaxed_topk: need 1 <= k <= d");
  VIBI_REQUIRE(tau > 0.0, "relaxed_topk: temperature must be positive");
  for (auto v : log_p) VIBI_REQUIRE(std::isfinite(v), "relaxed_topk: log-probabilities must be finite");
  std::vector<Tensor> noise(k, Tensor(Shape{1, d}));
  for (auto& n : noise) {
    for (auto& v : n.storage()) v = static_cast<float>(gumbel(rng));
  }
  Graph<float> g;
  auto z = relaxed_topk(g.constant(Tensor(Shape{1, d}, std::vector<float>(log_p.begin(), log_p.end()))),
                        std::span<const Tensor>(noise), static_cast<float>(tau));
  return {{z.value().data().begin(), z.value().data().end()}, k, tau};
}

/// Indices of the k largest scores; ties go to the lower index.
inline std::vector<std::size_t> topk_indices(std::span<const float> scores, std::size_t k) {
  VIBI_REQUIRE(k >= 1 && k <= scores.size(), "hard_topk: need 1 <= k <= d");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline HardMask hard_topk(std::span<const float> log_p, std::size_t k) {
  HardMask m;
  m.selected = topk_indices(log_p, k);
  m.values.assign(log_p.size(), 0.0f);
  for (auto j : m.selected) m.values[j] = 1.0f;
  return m;
}

}  // namespace vibi
