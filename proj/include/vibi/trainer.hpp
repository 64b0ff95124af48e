#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vibi/adam.hpp"
#include "vibi/checkpoint.hpp"
#include "vibi/data.hpp"
#include "vibi/eval.hpp"
#include "vibi/objective.hpp"
#include "vibi/sampler.hpp"

namespace vibi {

inline constexpr std::uint64_t kInitExplainerStream = 1;
inline constexpr std::uint64_t kInitApproximatorStream = 2;
inline constexpr std::uint64_t kShuffleStream = 3;
inline constexpr std::uint64_t kNoiseStream = 4;
inline constexpr std::uint64_t kBlackBoxStream = 5;

/// Raised when the loss goes non-finite; carries the trace up to the last finite batch.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, TrainTrace trace) : NumericError(what), trace_(std::move(trace)) {}
  const TrainTrace& trace() const { return trace_; }

 private:
  TrainTrace trace_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0, nll = 0.0, kl = 0.0;
  std::optional<double> val_fidelity;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Fisher-Yates permutation of [0, n) driven by `rng`.
inline std::vector<std::size_t> permutation(std::size_t n, RngStream rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_open() * static_cast<double>(i));
    std::swap(p[i - 1], p[std::min(j, i - 1)]);
  }
  return p;
}

namespace detail {

inline std::vector<Tensor> collect_grads(Graph<float>& g, std::span<const Var<float>> vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (auto v : vars) out.push_back(g.grad(v));
  return out;
}

}  // namespace detail

/// Joint training of explainer and approximator. Black-box outputs are queried
/// once per instance up front; nothing else about the black-box is used.
/// With a validation set, the parameters with the best validation approximator
/// fidelity are kept and training stops after `patience` epochs without
/// improvement.
inline Checkpoint train_vibi(const Dataset& train, const BlackBox& bb, const VibiConfig& cfg,
                             const Dataset* validation = nullptr, const EpochCallback& on_epoch = {}) {
  Checkpoint ck(cfg);
  if (train.size() == 0) {
    throw InvalidArgument("train_vibi: empty training set");
  }
  if (train.instance_shape() != cfg.input_shape) {
    throw InvalidArgument("train_vibi: data instances are " + shape_str(train.instance_shape()) +
                          ", config expects " + shape_str(cfg.input_shape));
  }
  if (bb.classes() != cfg.classes) {
    throw InvalidArgument("train_vibi: black-box has " + std::to_string(bb.classes()) + " classes, config has " +
                          std::to_string(cfg.classes));
  }

  const RngStream root(cfg.seed);
  ck.explainer.init(root.child(kInitExplainerStream));
  ck.approximator.init(root.child(kInitApproximatorStream));

  const Tensor bb_log_probs = bb.predict(train.x);
  const auto targets = argmax_rows(bb_log_probs);
  std::vector<std::size_t> val_labels;
  Dataset val_subset;
  const bool use_validation = validation != nullptr && validation->size() > 0;
  if (use_validation) {
    const std::size_t m = cfg.validation_limit == 0 ? validation->size() : std::min(cfg.validation_limit, validation->size());
    val_subset = validation->slice(0, m);
    val_labels = bb.labels(val_subset.x);
  }

  const std::size_t n = train.size(), d = ck.map.d(), f = train.features(), L = cfg.samples, C = cfg.classes;
  const std::size_t batches_full = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t batches = cfg.steps_per_epoch == 0 ? batches_full : std::min(cfg.steps_per_epoch, batches_full);

  AdamState adam{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, 0, {}, {}};
  std::vector<NamedTensor> joint;  // explainer params then approximator params
  auto gather_params = [&] {
    joint.clear();
    for (const auto& p : ck.explainer.params()) joint.push_back(p);
    for (const auto& p : ck.approximator.params()) joint.push_back(p);
  };
  auto scatter_params = [&] {
    std::size_t i = 0;
    for (auto& p : ck.explainer.params()) p.value = joint[i++].value;
    for (auto& p : ck.approximator.params()) p.value = joint[i++].value;
  };

  std::optional<Checkpoint> best;
  double best_fidelity = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, root.child(kShuffleStream).child(epoch));
    const RngStream epoch_noise = root.child(kNoiseStream).child(epoch);
    double sum_loss = 0.0, sum_nll = 0.0, sum_kl = 0.0;

    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch, m = std::min(cfg.batch, n - begin), rows = m * L;
      const std::span<const std::size_t> idx(order.data() + begin, m);
      const Dataset part = train.rows(idx);

      std::vector<std::size_t> rep(rows), row_targets(rows);
      Shape xs = part.x.shape();
      xs[0] = rows;
      Tensor x_rep(xs);
      Tensor soft;
      if (cfg.soft_labels) soft = Tensor(Shape{rows, C});
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = r / L;
        rep[r] = i;
        row_targets[r] = targets[idx[i]];
        std::copy_n(part.x.storage().begin() + static_cast<std::ptrdiff_t>(i * f), f,
                    x_rep.storage().begin() + static_cast<std::ptrdiff_t>(r * f));
        if (cfg.soft_labels) {
          for (std::size_t c = 0; c < C; ++c) soft[r * C + c] = std::exp(bb_log_probs[idx[i] * C + c]);
        }
      }
      const RngStream batch_noise = epoch_noise.child(b);
      const auto noise = gumbel_noise<float>(rows, d, cfg.k, [&](std::size_t r) { return batch_noise.child(r); });

      Graph<float> g;
      const auto pe = ck.explainer.bind(g, true);
      const auto pa = ck.approximator.bind(g, true);
      auto logp = explainer_forward(ck.explainer, g.constant(part.x), std::span<const Var<float>>(pe), d);
      auto logp_rep = L == 1 ? logp : gather(logp, 0, rep);
      auto z = relaxed_topk(logp_rep, std::span<const Tensor>(noise), static_cast<float>(cfg.tau));
      auto t = apply_mask(g.constant(std::move(x_rep)), z, ck.map);
      auto logq = approximator_forward(ck.approximator, t, std::span<const Var<float>>(pa));

      Var<float> total;
      LossTerms terms;
      if (cfg.objective == Objective::l2x) {
        total = cfg.soft_labels ? approximator_soft_nll(logq, soft) : approximator_nll(logq, row_targets);
        terms.nll = terms.total = total.value().item();
      } else if (cfg.soft_labels) {
        auto nll = approximator_soft_nll(logq, soft);
        auto kl = mean_all(kl_to_uniform(logp));
        total = add(nll, scale(kl, static_cast<float>(cfg.beta)));
        terms = {nll.value().item(), kl.value().item(), cfg.beta, total.value().item()};
      } else {
        auto loss = vibi_loss(logq, row_targets, logp, cfg.beta);
        total = loss.total;
        terms = loss.terms;
      }

      if (!std::isfinite(terms.total)) {
        throw DivergenceError("train_vibi: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                  std::to_string(b),
                              ck.trace);
      }
      g.backward(total);
      auto grads = detail::collect_grads(g, pe);
      const auto ga = detail::collect_grads(g, pa);
      grads.insert(grads.end(), ga.begin(), ga.end());
      gather_params();
      adam_step(joint, grads, adam, cfg.lr);
      scatter_params();

      ck.trace.batch_loss.push_back(static_cast<float>(terms.total));
      sum_loss += terms.total;
      sum_nll += terms.nll;
      sum_kl += terms.kl;
    }

    EpochStats stats{epoch, sum_loss / static_cast<double>(batches), sum_nll / static_cast<double>(batches),
                     sum_kl / static_cast<double>(batches), std::nullopt};
    ck.trace.epoch_loss.push_back(static_cast<float>(stats.loss));
    ck.trace.epoch_nll.push_back(static_cast<float>(stats.nll));
    ck.trace.epoch_kl.push_back(static_cast<float>(stats.kl));

    bool stop = false;
    if (use_validation) {
      const double fid = approximator_fidelity(ck, val_labels, val_subset, cfg.eval_samples).accuracy;
      stats.val_fidelity = fid;
      ck.trace.val_fidelity.push_back(static_cast<float>(fid));
      if (fid > best_fidelity) {
        best_fidelity = fid;
        since_best = 0;
        ck.trace.best_epoch = epoch;
        best.emplace(ck);
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        stop = true;
      }
    } else {
      ck.trace.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(stats);
    if (stop) break;
  }

  if (best) {
    best->trace = ck.trace;
    return std::move(*best);
  }
  return ck;
}

// ------------------------------------------------------------- grid search

struct GridSpace {
  std::vector<double> tau, lr, beta;
  std::vector<std::size_t> k;
  std::vector<std::size_t> epochs;  // empty = base config's epochs

  /// tau, lr, beta, k, epochs nested outermost to innermost.
  std::vector<VibiConfig> cells(const VibiConfig& base) const {
    VIBI_REQUIRE(!tau.empty() && !lr.empty() && !beta.empty() && !k.empty(), "grid search: empty search space");
    const std::vector<std::size_t> ep = epochs.empty() ? std::vector<std::size_t>{base.epochs} : epochs;
    std::vector<VibiConfig> out;
    for (double t : tau)
      for (double l : lr)
        for (double b : beta)
          for (std::size_t kk : k)
            for (std::size_t e : ep) {
              VibiConfig c = base;
              c.tau = t;
              c.lr = l;
              c.beta = b;
              c.k = kk;
              c.epochs = e;
              out.push_back(std::move(c));
            }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"tau", tau}, {"lr", lr}, {"beta", beta}, {"k", k}, {"epochs", epochs}};
  }

  static GridSpace from_json(const nlohmann::json& j) {
    GridSpace s;
    for (const auto& [key, v] : j.items()) {
      if (key == "tau") s.tau = v.get<std::vector<double>>();
      else if (key == "lr") s.lr = v.get<std::vector<double>>();
      else if (key == "beta") s.beta = v.get<std::vector<double>>();
      else if (key == "k") s.k = v.get<std::vector<std::size_t>>();
      else if (key == "epochs") s.epochs = v.get<std::vector<std::size_t>>();
      else throw InvalidArgument("grid space: unknown key '" + key + "'");
    }
    return s;
  }
};

struct GridCell {
  VibiConfig config;
  bool failed = false;
  std::string error;
  double fidelity = 0.0;  // validation approximator-fidelity accuracy
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  const VibiConfig& best_config() const { return cells.at(best).config; }

  nlohmann::json to_json() const {
    auto table = nlohmann::json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      nlohmann::json row = {{"cell", i}, {"tau", c.config.tau}, {"lr", c.config.lr}, {"beta", c.config.beta},
                            {"k", c.config.k}, {"epochs", c.config.epochs}, {"failed", c.failed}};
      if (c.failed) row["error"] = c.error;
      else row["fidelity"] = c.fidelity;
      table.push_back(std::move(row));
    }
    return {{"best_cell", best}, {"best_config", best_config().to_json()}, {"cells", table}};
  }
};

/// Trains every cell and picks the highest validation approximator fidelity;
/// ties go to the earliest cell. Cells run on up to `workers` threads and
/// results are merged by cell index.
inline GridResult grid_search(const Dataset& train, const Dataset& validation, const BlackBox& bb,
                              const VibiConfig& base, const GridSpace& space, std::size_t workers = 1) {
  if (validation.size() == 0) {
    throw InvalidArgument("grid search: validation split required");
  }
  GridResult result;
  for (auto& c : space.cells(base)) result.cells.push_back({std::move(c), false, {}, 0.0});
  const auto val_labels = bb.labels(validation.x);

  auto run_cell = [&](std::size_t i) {
    auto& cell = result.cells[i];
    try {
      const auto ck = train_vibi(train, bb, cell.config, &validation);
      cell.fidelity = approximator_fidelity(ck, val_labels, validation, cell.config.eval_samples).accuracy;
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, result.cells.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < result.cells.size(); ++i) run_cell(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= result.cells.size()) return;
            i = next++;
          }
          run_cell(i);
        }
      });
    }
  }

  bool any = false;
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    if (c.failed) continue;
    if (!any || c.fidelity > result.cells[result.best].fidelity) {
      result.best = i;
      any = true;
    }
  }
  if (!any) {
    throw NumericError("grid search: every cell failed; first error: " + result.cells.front().error);
  }
  return result;
}

// ---------------------------------------------------------- black-box model

struct BlackBoxTrainConfig {
  std::size_t epochs = 3;
  std::size_t batch = 50;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const { return {{"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"seed", seed}}; }
  static BlackBoxTrainConfig from_json(const nlohmann::json& j) { return from_json(j, BlackBoxTrainConfig{}); }

  static BlackBoxTrainConfig from_json(const nlohmann::json& j, BlackBoxTrainConfig c) {
    for (const auto& [key, v] : j.items()) {
      if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "batch") c.batch = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw InvalidArgument("black-box config: unknown key '" + key + "'");
    }
    return c;
  }
};

/// Supervised cross-entropy training of a classifier with Adam (0.9, 0.999, 1e-8).
/// Returns the per-epoch mean loss.
inline std::vector<double> train_classifier(Model& model, const Dataset& train, const BlackBoxTrainConfig& cfg,
                                            const EpochCallback& on_epoch = {}) {
  VIBI_REQUIRE(train.labels.size() == train.size(), "train_classifier: labelled data required");
  VIBI_REQUIRE(cfg.batch >= 1 && cfg.epochs >= 1 && cfg.lr > 0.0, "train_classifier: invalid config");
  const RngStream root = RngStream(cfg.seed).child(kBlackBoxStream);
  model.init(root.child(0));
  AdamState adam{0.9, 0.999, 1e-8, 0, {}, {}};
  std::vector<double> trace;
  const std::size_t n = train.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, root.child(1).child(epoch));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::size_t m = std::min(cfg.batch, n - begin);
      const auto part = train.rows(std::span<const std::size_t>(order.data() + begin, m));
      Graph<float> g;
      const auto params = model.bind(g, true);
      auto loss = mean_all(nll_pick(model.forward(g.constant(part.x), std::span<const Var<float>>(params)), part.labels));
      const double v = loss.value().item();
      if (!std::isfinite(v)) {
        throw NumericError("train_classifier: non-finite loss at epoch " + std::to_string(epoch));
      }
      g.backward(loss);
      const auto grads = detail::collect_grads(g, params);
      adam_step(model.params(), grads, adam, cfg.lr);
      sum += v;
      ++batches;
    }
    trace.push_back(sum / static_cast<double>(batches));
    if (on_epoch) on_epoch({epoch, trace.back(), trace.back(), 0.0, std::nullopt});
  }
  return trace;
}

inline double classifier_accuracy(const Model& model, const Dataset& data) {
  VIBI_REQUIRE(data.labels.size() == data.size() && data.size() > 0, "accuracy: labelled data required");
  const auto pred = argmax_rows(model.predict(data.x));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace vibi
