#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "vibi/checkpoint.hpp"
#include "vibi/data.hpp"
#include "vibi/rng.hpp"
#include "vibi/sampler.hpp"

namespace vibi {

// Stream ids under the run seed. Training streams live in trainer.hpp.
inline constexpr std::uint64_t kEvalStream = 101;

enum class FidelityVariant { approximator, rationale };

struct FidelityReport {
  FidelityVariant variant = FidelityVariant::approximator;
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double f1_micro = 0.0;
  std::size_t n = 0;
  std::size_t samples_per_instance = 1;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]

  nlohmann::json to_json(bool include_micro = false) const {
    nlohmann::json j = {{"variant", variant == FidelityVariant::approximator ? "approximator" : "rationale"},
                        {"accuracy", accuracy},
                        {"f1_macro", f1_macro},
                        {"n", n},
                        {"samples_per_instance", samples_per_instance},
                        {"confusion", confusion}};
    if (include_micro) j["f1_micro"] = f1_micro;
    return j;
  }
};

/// Per-class F1 = 2TP / (2TP + FP + FN), averaged over classes that occur as a
/// label or a prediction.
inline double macro_f1(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t c = confusion.size();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += confusion[k][j];
      col += confusion[j][k];
    }
    if (row == 0 && col == 0) continue;
    const double tp = static_cast<double>(confusion[k][k]);
    total += 2.0 * tp / (static_cast<double>(row) + static_cast<double>(col));
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

inline FidelityReport make_report(FidelityVariant variant, std::size_t classes, std::span<const std::size_t> truth,
                                  std::span<const std::size_t> predicted, std::size_t samples) {
  VIBI_REQUIRE(truth.size() == predicted.size(), "fidelity: label count mismatch");
  if (truth.empty()) {
    throw InvalidArgument("fidelity: empty data");
  }
  FidelityReport r;
  r.variant = variant;
  r.n = truth.size();
  r.samples_per_instance = samples;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    VIBI_REQUIRE(truth[i] < classes && predicted[i] < classes, "fidelity: label out of range");
    ++r.confusion[truth[i]][predicted[i]];
    hits += truth[i] == predicted[i];
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n);
  r.f1_micro = r.accuracy;
  r.f1_macro = macro_f1(r.confusion);
  return r;
}

namespace detail {

inline constexpr std::size_t kEvalSlice = 100;

inline void check_compatible(const Checkpoint& ck, const Dataset& data) {
  if (data.size() == 0) {
    throw InvalidArgument("fidelity: empty data");
  }
  if (data.instance_shape() != ck.config.input_shape) {
    throw InvalidArgument("fidelity: data instances are " + shape_str(data.instance_shape()) + ", checkpoint expects " +
                          shape_str(ck.config.input_shape));
  }
}

}  // namespace detail

/// Explainer log-probabilities p_j(x), [N, d].
inline Tensor explainer_log_probs(const Checkpoint& ck, const Tensor& x) { return ck.explainer.predict(x); }

/// Predictions from `n_samples` relaxed masks per instance, averaged in
/// probability space. Instance i, sample s draws from
/// RngStream(seed).child(kEvalStream).child(i).child(s).
inline std::vector<std::size_t> approximator_predictions(const Checkpoint& ck, const Dataset& data,
                                                         std::size_t n_samples, std::uint64_t seed) {
  detail::check_compatible(ck, data);
  VIBI_REQUIRE(n_samples >= 1, "fidelity: n_samples must be at least 1");
  const std::size_t n = data.size(), d = ck.map.d(), f = data.features(), classes = ck.config.classes;
  const RngStream root = RngStream(seed).child(kEvalStream);
  std::vector<std::size_t> out(n);
  for (std::size_t start = 0; start < n; start += detail::kEvalSlice) {
    const std::size_t m = std::min(detail::kEvalSlice, n - start), rows = m * n_samples;
    const auto part = data.slice(start, start + m);
    const auto logp = explainer_log_probs(ck, part.x);

    Tensor logp_rep(Shape{rows, d});
    Shape xs = part.x.shape();
    xs[0] = rows;
    Tensor x_rep(xs);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r / n_samples;
      std::copy_n(logp.storage().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                  logp_rep.storage().begin() + static_cast<std::ptrdiff_t>(r * d));
      std::copy_n(part.x.storage().begin() + static_cast<std::ptrdiff_t>(i * f), f,
                  x_rep.storage().begin() + static_cast<std::ptrdiff_t>(r * f));
    }
    const auto noise = gumbel_noise<float>(rows, d, ck.config.k, [&](std::size_t r) {
      return root.child(start + r / n_samples).child(r % n_samples);
    });

    Graph<float> g;
    auto z = relaxed_topk(g.constant(std::move(logp_rep)), std::span<const Tensor>(noise),
                          static_cast<float>(ck.config.tau));
    auto t = apply_mask(g.constant(std::move(x_rep)), z, ck.map);
    auto params = ck.approximator.bind(g, false);
    const auto& logq = approximator_forward(ck.approximator, t, std::span<const Var<float>>(params)).value();

    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> avg(classes, 0.0);
      for (std::size_t s = 0; s < n_samples; ++s) {
        const std::size_t r = i * n_samples + s;
        for (std::size_t c = 0; c < classes; ++c) avg[c] += std::exp(static_cast<double>(logq[r * classes + c]));
      }
      out[start + i] = static_cast<std::size_t>(std::max_element(avg.begin(), avg.end()) - avg.begin());
    }
  }
  return out;
}

/// Exact k-hot masks from the explainer's top-k scores.
inline std::vector<HardMask> hard_masks(const Checkpoint& ck, const Tensor& x) {
  const auto logp = explainer_log_probs(ck, x);
  const std::size_t n = logp.dim(0), d = ck.map.d();
  std::vector<HardMask> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(hard_topk(logp.data().subspan(i * d, d), ck.config.k));
  return out;
}

inline std::vector<std::size_t> rationale_predictions(const Checkpoint& ck, const Dataset& data) {
  detail::check_compatible(ck, data);
  const std::size_t n = data.size(), f = data.features();
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += detail::kEvalSlice) {
    const std::size_t m = std::min(detail::kEvalSlice, n - start);
    auto part = data.slice(start, start + m);
    const auto masks = hard_masks(ck, part.x);
    for (std::size_t i = 0; i < m; ++i) {
      auto masked = apply_mask(part.x.data().subspan(i * f, f), masks[i].values, ck.map);
      std::copy(masked.begin(), masked.end(), part.x.storage().begin() + static_cast<std::ptrdiff_t>(i * f));
    }
    const auto pred = argmax_rows(ck.approximator.predict(part.x));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

/// Black-box labels supplied by the caller (already queried once).
inline FidelityReport approximator_fidelity(const Checkpoint& ck, std::span<const std::size_t> blackbox_labels,
                                            const Dataset& data, std::size_t n_samples = 12) {
  VIBI_REQUIRE(blackbox_labels.size() == data.size(), "fidelity: one black-box label per instance required");
  const auto pred = approximator_predictions(ck, data, n_samples, ck.config.seed);
  return make_report(FidelityVariant::approximator, ck.config.classes, blackbox_labels, pred, n_samples);
}

inline FidelityReport approximator_fidelity(const Checkpoint& ck, const BlackBox& bb, const Dataset& data,
                                            std::size_t n_samples = 12) {
  detail::check_compatible(ck, data);
  const auto labels = bb.labels(data.x);
  return approximator_fidelity(ck, labels, data, n_samples);
}

inline FidelityReport rationale_fidelity(const Checkpoint& ck, std::span<const std::size_t> blackbox_labels,
                                         const Dataset& data) {
  VIBI_REQUIRE(blackbox_labels.size() == data.size(), "fidelity: one black-box label per instance required");
  const auto pred = rationale_predictions(ck, data);
  return make_report(FidelityVariant::rationale, ck.config.classes, blackbox_labels, pred, 1);
}

inline FidelityReport rationale_fidelity(const Checkpoint& ck, const BlackBox& bb, const Dataset& data) {
  detail::check_compatible(ck, data);
  const auto labels = bb.labels(data.x);
  return rationale_fidelity(ck, labels, data);
}

struct SelectionQuality {
  std::vector<double> precision, recall;
  double mean_precision = 0.0, mean_recall = 0.0;
};

inline SelectionQuality selection_quality(std::span<const HardMask> masks, std::span<const std::size_t> truth) {
  if (truth.empty()) {
    throw InvalidArgument("selection quality: missing ground-truth chunks");
  }
  VIBI_REQUIRE(!masks.empty(), "selection quality: no instances");
  SelectionQuality q;
  for (const auto& m : masks) {
    std::size_t hits = 0;
    for (auto j : m.selected) hits += std::find(truth.begin(), truth.end(), j) != truth.end();
    q.precision.push_back(static_cast<double>(hits) / static_cast<double>(m.selected.size()));
    q.recall.push_back(static_cast<double>(hits) / static_cast<double>(truth.size()));
    q.mean_precision += q.precision.back();
    q.mean_recall += q.recall.back();
  }
  q.mean_precision /= static_cast<double>(masks.size());
  q.mean_recall /= static_cast<double>(masks.size());
  return q;
}

inline SelectionQuality selection_quality(const Checkpoint& ck, const Dataset& data, std::span<const std::size_t> truth) {
  if (truth.empty()) {
    throw InvalidArgument("selection quality: missing ground-truth chunks");
  }
  detail::check_compatible(ck, data);
  for (auto j : truth) VIBI_REQUIRE(j < ck.map.d(), "selection quality: ground-truth chunk out of range");
  return selection_quality(hard_masks(ck, data.x), truth);
}

}  // namespace vibi
