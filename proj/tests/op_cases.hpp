#pragma once

// Randomised gradient-check cases for every differentiable operator. Shared by
// the diffcore unit tests and the acceptance suite.

#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "vibi/chunker.hpp"
#include "vibi/grad_check.hpp"
#include "vibi/nets.hpp"
#include "vibi/objective.hpp"
#include "vibi/ops.hpp"
#include "vibi/rng.hpp"
#include "vibi/sampler.hpp"

namespace vibi::testing {

struct CheckPair {
  GradCheckReport single;  // float analytic vs 64-bit numeric
  GradCheckReport shadow;  // 64-bit analytic vs 64-bit numeric
};

inline constexpr double kSingleStep = 1e-3;
inline constexpr double kSingleTol = 1e-3;
inline constexpr double kShadowStep = 1e-4;
inline constexpr double kShadowTol = 1e-6;

template <typename Builder>
CheckPair check_both(Builder&& b, const Tensor64& x) {
  return {grad_check<float>(b, x, kSingleStep, kSingleTol), grad_check<double>(b, x, kShadowStep, kShadowTol)};
}

inline Tensor64 random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor64 t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

/// Elements [offset, offset + size(shape)) of a flat leaf, reshaped.
template <typename V>
V slice(V flat, std::size_t offset, Shape shape) {
  const std::size_t n = flat.value().size();
  std::vector<std::size_t> idx(shape_size(shape));
  std::iota(idx.begin(), idx.end(), offset);
  auto row = reshape(flat, Shape{1, n});
  return reshape(gather(row, 1, idx), std::move(shape));
}

/// Sum of y weighted by fixed pseudo-random weights drawn from `seed`, so each
/// output element receives a distinct upstream gradient.
template <typename V>
V weighted_sum(V y, std::uint64_t seed) {
  using T = typename V::value_type;
  std::mt19937_64 rng(seed);
  auto w = random_tensor(rng, y.shape(), 0.5, 1.5);
  return sum(mul(y, y.graph->constant(w.template cast<T>())));
}

struct OpCase {
  std::string name;
  std::function<CheckPair(std::uint64_t seed)> run;
};

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;

  auto binary = [&](std::string name, auto op) {
    cases.push_back({name, [op](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto x = random_tensor(rng, {2, 6});
                       return check_both(
                           [&](auto&, auto v) {
                             const std::vector<std::size_t> r0{0}, r1{1};
                             return weighted_sum(op(gather(v, 0, r0), gather(v, 0, r1)), seed);
                           },
                           x);
                     }});
  };
  binary("add", [](auto a, auto b) { return add(a, b); });
  binary("sub", [](auto a, auto b) { return sub(a, b); });
  binary("mul", [](auto a, auto b) { return mul(a, b); });
  binary("maximum", [](auto a, auto b) { return maximum(a, b); });
  binary("mul_fanout", [](auto a, auto) { return mul(a, a); });

  auto unary = [&](std::string name, Shape shape, double lo, double hi, auto op) {
    cases.push_back({name, [op, shape, lo, hi](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto x = random_tensor(rng, shape, lo, hi);
                       return check_both([&](auto&, auto v) { return weighted_sum(op(v), seed); }, x);
                     }});
  };
  unary("scale", {3, 5}, -1, 1, [](auto v) { return scale(v, typename decltype(v)::value_type(-1.7)); });
  unary("add_scalar", {3, 5}, -1, 1, [](auto v) { return add_scalar(v, typename decltype(v)::value_type(0.3)); });
  unary("relu", {3, 5}, -1, 1, [](auto v) { return relu(v); });
  unary("exp", {3, 5}, -2, 2, [](auto v) { return exp(v); });
  unary("log", {3, 5}, 0.5, 2, [](auto v) { return log(v); });
  unary("reshape", {3, 5}, -1, 1, [](auto v) { return reshape(v, Shape{5, 3}); });
  unary("sum", {3, 5}, -1, 1, [](auto v) { return sum(v); });
  unary("mean_axis0", {3, 5}, -1, 1, [](auto v) { return mean(v, 0); });
  unary("mean_axis1", {2, 3, 4}, -1, 1, [](auto v) { return mean(v, 1); });
  unary("log_softmax", {3, 5}, -3, 3, [](auto v) { return log_softmax(v); });
  unary("nll_pick", {4, 5}, -3, 3, [](auto v) {
    const std::vector<std::size_t> targets{0, 4, 2, 2};
    return nll_pick(log_softmax(v), targets);
  });
  unary("gather_axis0", {3, 4}, -1, 1, [](auto v) {
    const std::vector<std::size_t> idx{2, 0, 2, 1, 2};
    return gather(v, 0, idx);
  });
  unary("gather_axis1", {3, 4}, -1, 1, [](auto v) {
    const std::vector<std::size_t> idx{3, 3, 0, 1, 1, 1};
    return gather(v, 1, idx);
  });
  unary("scatter_axis0", {4, 3}, -1, 1, [](auto v) {
    const std::vector<std::size_t> idx{1, 0, 1, 4};
    return scatter(v, 0, idx, 5);
  });
  unary("scatter_axis1", {2, 5}, -1, 1, [](auto v) {
    const std::vector<std::size_t> idx{2, 2, 0, 1, 2};
    return scatter(v, 1, idx, 3);
  });
  unary("maxpool2x2", {2, 2, 4, 6}, -1, 1, [](auto v) { return maxpool2d(v, 2); });
  unary("maxpool3x3", {1, 2, 6, 7}, -1, 1, [](auto v) { return maxpool2d(v, 3); });

  // Operators with several tensor operands: x packs every operand end to end.
  cases.push_back({"matmul", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = random_tensor(rng, {3 * 4 + 4 * 2});
                     return check_both(
                         [&](auto&, auto v) {
                           return weighted_sum(matmul(slice(v, 0, {3, 4}), slice(v, 12, {4, 2})), seed);
                         },
                         x);
                   }});
  cases.push_back({"add_bias", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = random_tensor(rng, {2 * 3 * 4 + 3});
                     return check_both(
                         [&](auto&, auto v) {
                           return weighted_sum(add_bias(slice(v, 0, {2, 3, 4}), slice(v, 24, {3})), seed);
                         },
                         x);
                   }});
  for (std::size_t pad : {0, 1}) {
    cases.push_back({"conv2d_pad" + std::to_string(pad), [pad](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       const std::size_t nx = 2 * 2 * 5 * 5, nw = 3 * 2 * 3 * 3;
                       auto x = random_tensor(rng, {nx + nw + 3});
                       return check_both(
                           [&](auto&, auto v) {
                             auto y = conv2d(slice(v, 0, {2, 2, 5, 5}), slice(v, nx, {3, 2, 3, 3}),
                                             slice(v, nx + nw, {3}), pad);
                             return weighted_sum(y, seed);
                           },
                           x);
                     }});
  }
  return cases;
}

/// Small random CNN (conv -> relu -> pool -> conv -> relu -> dense -> log-softmax -> NLL)
/// as a function of its input image batch.
inline CheckPair cnn_input_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor(rng, {2, 1, 8, 8});
  auto w1 = random_tensor(rng, {3, 1, 3, 3}, -0.5, 0.5);
  auto b1 = random_tensor(rng, {3}, -0.1, 0.1);
  auto w2 = random_tensor(rng, {4, 3, 2, 2}, -0.5, 0.5);
  auto b2 = random_tensor(rng, {4}, -0.1, 0.1);
  auto w3 = random_tensor(rng, {4 * 2 * 2, 3}, -0.5, 0.5);
  auto b3 = random_tensor(rng, {3}, -0.1, 0.1);
  const std::vector<std::size_t> targets{1, 2};
  return check_both(
      [&](auto& g, auto v) {
        using T = typename decltype(v)::value_type;
        auto c = [&](const Tensor64& t) { return g.constant(t.template cast<T>()); };
        auto h = maxpool2d(relu(conv2d(v, c(w1), c(b1))), 2);
        h = relu(conv2d(h, c(w2), c(b2)));
        auto logits = add_bias(matmul(reshape(h, Shape{2, 16}), c(w3)), c(b3));
        return mean_all(nll_pick(log_softmax(logits), targets));
      },
      x);
}

/// Full training loss (explainer -> relaxed top-k -> mask -> approximator ->
/// NLL + beta KL) as a function of all explainer and approximator parameters,
/// with the Gumbel noise held fixed.
inline CheckPair pipeline_check(std::uint64_t seed) {
  const auto map = ChunkMap::tokens(8, 1, 4);
  const std::size_t d = map.d(), k = 2, L = 2, n = 2, rows = n * L;
  Model explainer(Shape{8, 4}, mlp_layers(4, d)), approximator(Shape{8, 4}, mlp_layers(4, 2));
  explainer.init(RngStream(seed).child(1));
  approximator.init(RngStream(seed).child(2));

  std::mt19937_64 rng(seed);
  const auto x = random_tensor(rng, {n, 8, 4});
  Tensor64 x_rep(Shape{rows, 8, 4});
  const std::vector<std::size_t> rep{0, 0, 1, 1}, targets{0, 1, 1, 1};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < 32; ++j) x_rep[r * 32 + j] = x[rep[r] * 32 + j];
  }
  const RngStream noise_root = RngStream(seed).child(3);
  const auto noise = gumbel_noise<double>(rows, d, k, [&](std::size_t r) { return noise_root.child(r); });

  std::vector<Shape> shapes;
  std::vector<double> flat;
  for (const Model* m : {&explainer, &approximator}) {
    for (const auto& p : m->params()) {
      shapes.push_back(p.value.shape());
      for (float v : p.value.storage()) flat.push_back(v);
    }
  }
  Tensor64 theta(Shape{flat.size()});
  std::copy(flat.begin(), flat.end(), theta.storage().begin());
  const std::size_t n_explainer = explainer.params().size();

  return check_both(
      [&](auto& g, auto v) {
        using T = typename decltype(v)::value_type;
        using V = decltype(v);
        std::vector<V> pe, pa;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
          auto p = slice(v, offset, shapes[i]);
          offset += shape_size(shapes[i]);
          (i < n_explainer ? pe : pa).push_back(p);
        }
        std::vector<BasicTensor<T>> noise_t;
        for (const auto& e : noise) noise_t.push_back(e.template cast<T>());
        auto logp = explainer_forward(explainer, g.constant(x.template cast<T>()), std::span<const V>(pe), d);
        auto z = relaxed_topk(gather(logp, 0, rep), std::span<const BasicTensor<T>>(noise_t), T(0.5));
        auto t = apply_mask(g.constant(x_rep.template cast<T>()), z, map);
        auto logq = approximator_forward(approximator, t, std::span<const V>(pa));
        return vibi_loss(logq, targets, logp, 0.1).total;
      },
      theta);
}

}  // namespace vibi::testing
