#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "vibi/eval.hpp"
#include "vibi/presets.hpp"
#include "vibi/trainer.hpp"

namespace vibi {
namespace {

Checkpoint synth_checkpoint(std::size_t k, std::uint64_t seed) {
  auto cfg = synth_config();
  cfg.k = k;
  cfg.seed = seed;
  Checkpoint ck(cfg);
  ck.explainer.init(RngStream(seed).child(1));
  ck.approximator.init(RngStream(seed).child(2));
  return ck;
}

TEST(Report, ConstantPredictorOnBalancedBinary) {
  std::vector<std::size_t> truth(100), pred(100, 0);
  for (std::size_t i = 0; i < 100; ++i) truth[i] = i % 2;
  const auto r = make_report(FidelityVariant::approximator, 2, truth, pred, 12);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_NEAR(r.f1_macro, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{50, 0}, {50, 0}}));
  const auto j = r.to_json();
  EXPECT_EQ(j["variant"], "approximator");
  EXPECT_EQ(j["n"], 100);
  EXPECT_FALSE(j.contains("f1_micro"));
  EXPECT_TRUE(r.to_json(true).contains("f1_micro"));
}

TEST(Report, MacroF1MatchesPerClassOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> cls(0, 4);
  std::vector<std::size_t> truth(500), pred(500);
  for (std::size_t i = 0; i < 500; ++i) {
    truth[i] = cls(rng);
    pred[i] = rng() % 3 == 0 ? cls(rng) : truth[i];
  }
  const auto r = make_report(FidelityVariant::rationale, 5, truth, pred, 1);
  double f1 = 0;
  std::size_t trace = 0, total = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 500; ++i) {
      tp += truth[i] == c && pred[i] == c;
      fp += truth[i] != c && pred[i] == c;
      fn += truth[i] == c && pred[i] != c;
    }
    const double precision = tp / (tp + fp), recall = tp / (tp + fn);
    f1 += 2 * precision * recall / (precision + recall);
    trace += r.confusion[c][c];
    for (auto v : r.confusion[c]) total += v;
  }
  EXPECT_NEAR(r.f1_macro, f1 / 5, 1e-12);
  EXPECT_EQ(total, 500u);
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(trace) / 500.0);
  EXPECT_THROW(make_report(FidelityVariant::rationale, 5, {}, {}, 1), InvalidArgument);
}

TEST(Fidelity, ConstantApproximatorThroughCheckpoint) {
  auto ck = synth_checkpoint(2, 1);
  for (auto& p : ck.approximator.params()) p.value.fill(0.0f);
  ck.approximator.params().back().value = Tensor::vector({3.0f, 0.0f});
  SynthSpec spec;
  spec.n = 400;
  const auto task = gen_synth(spec, 2);
  const auto r = approximator_fidelity(ck, *task.blackbox, task.data, 12);
  double zeros = 0;
  for (auto l : task.data.labels) zeros += l == 0;
  EXPECT_DOUBLE_EQ(r.accuracy, zeros / 400.0);
  EXPECT_EQ(r.samples_per_instance, 12u);
}

TEST(Fidelity, FullSelectionEqualsUnmaskedApproximator) {
  const auto ck = synth_checkpoint(8, 3);
  SynthSpec spec;
  spec.n = 300;
  const auto task = gen_synth(spec, 4);
  const auto unmasked = argmax_rows(ck.approximator.predict(task.data.x));
  EXPECT_EQ(rationale_predictions(ck, task.data), unmasked);

  // Black-box that is a bit-copy of the approximator.
  ModelBlackBox copy(ck.approximator);
  EXPECT_DOUBLE_EQ(rationale_fidelity(ck, copy, task.data).accuracy, 1.0);
}

TEST(Fidelity, DeterministicGivenSeed) {
  const auto ck = synth_checkpoint(2, 5);
  SynthSpec spec;
  spec.n = 200;
  const auto task = gen_synth(spec, 6);
  const auto a = approximator_fidelity(ck, *task.blackbox, task.data);
  const auto b = approximator_fidelity(ck, *task.blackbox, task.data);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(rationale_fidelity(ck, *task.blackbox, task.data).to_json().dump(),
            rationale_fidelity(ck, *task.blackbox, task.data).to_json().dump());
}

TEST(Fidelity, EmptyAndMismatchedDataRejected) {
  const auto ck = synth_checkpoint(2, 5);
  Dataset wrong;
  wrong.x = Tensor(Shape{3, 32});
  EXPECT_THROW(rationale_predictions(ck, wrong), InvalidArgument);
}

TEST(Fidelity, PlantedExplainerWithTrainedApproximator) {
  // Explainer hand-set to put its mass on the planted chunks; approximator
  // trained on inputs masked to exactly those chunks.
  SynthSpec spec;
  spec.n = 10000;
  const auto task = gen_synth(spec, 7);
  auto cfg = synth_config(spec);
  cfg.explainer = {LayerSpec::flatten(), LayerSpec::dense(8), LayerSpec::log_softmax()};
  Checkpoint ck(cfg);
  ck.explainer.params()[1].value = Tensor::vector({0, 0, 5, 0, 0, 5, 0, 0});

  Dataset masked = task.data;
  const std::vector<float> z{0, 0, 1, 0, 0, 1, 0, 0};
  for (std::size_t i = 0; i < masked.size(); ++i) {
    auto row = apply_mask(task.data.x.data().subspan(i * 32, 32), z, ck.map);
    std::copy(row.begin(), row.end(), masked.x.storage().begin() + static_cast<std::ptrdiff_t>(i * 32));
  }
  BlackBoxTrainConfig tc;
  tc.epochs = 10;
  tc.batch = 50;
  tc.lr = 3e-3;
  train_classifier(ck.approximator, masked, tc);

  SynthSpec held = spec;
  held.n = 1000;
  const auto test = gen_synth(held, 8);
  EXPECT_GE(rationale_fidelity(ck, *test.blackbox, test.data).accuracy, 0.99);
  const auto q = selection_quality(ck, test.data, test.data.relevant);
  EXPECT_DOUBLE_EQ(q.mean_precision, 1.0);
  EXPECT_DOUBLE_EQ(q.mean_recall, 1.0);
}

TEST(SelectionQuality, Arithmetic) {
  const std::vector<std::size_t> truth{2, 5};
  auto mask = [](std::vector<std::size_t> sel) { return HardMask{{}, std::move(sel)}; };
  const std::vector<HardMask> exact{mask({2, 5})}, disjoint{mask({0, 1})}, wide{mask({1, 2, 5, 7})};
  EXPECT_DOUBLE_EQ(selection_quality(exact, truth).mean_precision, 1.0);
  EXPECT_DOUBLE_EQ(selection_quality(exact, truth).mean_recall, 1.0);
  EXPECT_DOUBLE_EQ(selection_quality(disjoint, truth).mean_precision, 0.0);
  EXPECT_DOUBLE_EQ(selection_quality(disjoint, truth).mean_recall, 0.0);
  EXPECT_DOUBLE_EQ(selection_quality(wide, truth).mean_precision, 0.5);
  EXPECT_DOUBLE_EQ(selection_quality(wide, truth).mean_recall, 1.0);
  EXPECT_THROW(selection_quality(exact, std::vector<std::size_t>{}), InvalidArgument);
}

}  // namespace
}  // namespace vibi
