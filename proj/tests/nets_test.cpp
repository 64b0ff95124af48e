#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "vibi/data.hpp"
#include "vibi/nets.hpp"

namespace vibi {
namespace {

Tensor random_images(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor x(Shape{n, 1, 28, 28});
  for (auto& v : x.storage()) v = static_cast<float>(rng.uniform_open());
  return x;
}

TEST(Nets, BlackBoxArchitecture) {
  auto m = build_blackbox_mnist();
  EXPECT_EQ(m.parameter_count(), 21840u);
  EXPECT_EQ(m.output_shape(), (Shape{10}));
}

TEST(Nets, UntrainedBlackBoxIsNearChance) {
  auto m = build_blackbox_mnist();
  m.init(RngStream(1));
  const auto x = random_images(1000, 2);
  std::vector<std::size_t> labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 10;
  const auto pred = argmax_rows(m.predict(x));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  EXPECT_NEAR(static_cast<double>(hits) / 1000.0, 0.1, 0.03);
}

TEST(Nets, ExplainerEmitsOneScorePerChunk) {
  const auto map = ChunkMap::grid(28, 28, 4, 4);
  Model e(Shape{1, 28, 28}, grid_explainer_layers(map));
  EXPECT_EQ(e.output_shape(), (Shape{49}));
  e.init(RngStream(3));
  const auto x = random_images(2, 4);
  const auto a = e.predict(x), b = e.predict(x);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 2; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 49; ++j) s += std::exp(a[i * 49 + j]);
    EXPECT_NEAR(s, 1.0, 1e-5);
  }

  Model two(Shape{1, 28, 28}, grid_explainer_layers(ChunkMap::grid(28, 28, 2, 2)));
  EXPECT_EQ(two.output_shape(), (Shape{196}));
}

TEST(Nets, ZeroFinalLayerGivesUniformScores) {
  const auto map = ChunkMap::grid(28, 28, 4, 4);
  Model e(Shape{1, 28, 28}, grid_explainer_layers(map));
  e.init(RngStream(3));
  const auto last = e.params().size();
  e.params()[last - 2].value.fill(0.0f);
  e.params()[last - 1].value.fill(0.0f);
  const auto out = e.predict(random_images(1, 5));
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, -std::log(49.0f));
}

TEST(Nets, ExplainerHeadSizeChecked) {
  Model e(Shape{1, 28, 28}, grid_explainer_layers(ChunkMap::grid(28, 28, 4, 4)));
  Graph<float> g;
  auto params = e.bind(g, false);
  EXPECT_THROW(explainer_forward(e, g.constant(Tensor(Shape{1, 1, 28, 28})), std::span<const Var<float>>(params), 196),
               InvalidArgument);
}

TEST(Nets, ApproximatorOnZeroInput) {
  Model a(Shape{1, 28, 28}, mnist_approximator_layers());
  a.init(RngStream(6));
  const auto out = a.predict(Tensor(Shape{3, 1, 28, 28}));
  ASSERT_EQ(out.shape(), (Shape{3, 10}));
  EXPECT_TRUE(out.all_finite());
  double s = 0;
  for (std::size_t c = 0; c < 10; ++c) s += std::exp(out[c]);
  EXPECT_NEAR(s, 1.0, 1e-5);
}

TEST(Nets, InitScaleMatchesFanIn) {
  auto m = build_blackbox_mnist();
  m.init(RngStream(8));
  for (const auto& p : m.params()) {
    if (p.name.ends_with(".bias")) {
      for (float v : p.value.data()) EXPECT_EQ(v, 0.0f);
      continue;
    }
    const auto& s = p.value.shape();
    const double fan_in = s.size() == 4 ? static_cast<double>(s[1] * s[2] * s[3]) : static_cast<double>(s[0]);
    double sq = 0;
    for (float v : p.value.data()) sq += static_cast<double>(v) * v;
    const double ratio = std::sqrt(sq / static_cast<double>(p.value.size())) / std::sqrt(2.0 / fan_in);
    EXPECT_GT(ratio, 0.5) << p.name;
    EXPECT_LT(ratio, 2.0) << p.name;
  }
}

TEST(Nets, ShapeErrorsAtBuildTime) {
  EXPECT_THROW(Model(Shape{1, 4, 4}, {LayerSpec::conv(2, 5)}), InvalidArgument);
  EXPECT_THROW(Model(Shape{1, 4, 4}, {LayerSpec::dense(3)}), InvalidArgument);
  EXPECT_THROW(Model(Shape{8}, {}), InvalidArgument);
}

TEST(Nets, LayerJsonRoundTripAndUnknownKeys) {
  const auto layers = mnist_blackbox_layers();
  EXPECT_EQ(layers_from_json(layers_to_json(layers)), layers);
  EXPECT_THROW(layer_from_json({{"type", "dense"}, {"units", 3}, {"bias", false}}), InvalidArgument);
  EXPECT_THROW(layer_from_json({{"type", "attention"}}), InvalidArgument);
}

TEST(RuleBlackBox, IgnoresIrrelevantChunks) {
  SynthSpec spec;
  auto task = gen_synth(spec, 11);
  const auto& bb = *task.blackbox;
  const auto map = spec.chunk_map();
  const std::size_t f = map.feature_count();
  RngStream rng(12);
  for (std::size_t i = 0; i < 200; ++i) {
    std::vector<float> x(task.data.x.data().begin() + static_cast<std::ptrdiff_t>(i * f),
                         task.data.x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
    const int before = bb.label_of(x);
    for (std::size_t j = 0; j < map.d(); ++j) {
      if (j == 2 || j == 5) continue;
      for (auto idx : map.members(j)) x[idx] = static_cast<float>(4.0 * rng.uniform_open() - 2.0);
    }
    EXPECT_EQ(bb.label_of(x), before);
  }
}

TEST(RuleBlackBox, ZeroInputIsClassZero) {
  SynthSpec spec;
  auto bb = make_rule_blackbox(spec.chunk_map(), spec.relevant, spec.instance_shape());
  EXPECT_EQ(bb->labels(Tensor(Shape{1, 8, 4})), (std::vector<std::size_t>{0}));
  EXPECT_THROW(make_rule_blackbox(spec.chunk_map(), {2, 9}, spec.instance_shape()), InvalidArgument);
  EXPECT_THROW(make_rule_blackbox(spec.chunk_map(), {}, spec.instance_shape()), InvalidArgument);
}

}  // namespace
}  // namespace vibi
