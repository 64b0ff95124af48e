#pragma once

// Inputs behind the golden heatmap fixtures. Shared by the unit tests and the
// acceptance suite.

#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "vibi/explain.hpp"
#include "vibi/presets.hpp"
#include "vibi/trainer.hpp"

namespace vibi::testing {

/// 28x28 ramp covering values below 0, above 1 and an exact half step.
inline std::vector<float> golden_image() {
  std::vector<float> x(28 * 28);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (static_cast<float>(i % 21) - 2.0f) / 16.0f;
  return x;
}

/// Heatmap of golden_image() with patches {0, 10, 48} of the 4x4 grid selected.
inline std::vector<std::uint8_t> fixed_selection_heatmap() {
  const auto x = golden_image();
  const std::vector<std::size_t> selected{0, 10, 48};
  return heatmap_pgm(x, selected, ChunkMap::grid(28, 28, 4, 4));
}

/// Explanation heatmap of golden_image() from an untrained MNIST-shaped
/// checkpoint initialised from seed 0.
inline std::vector<std::uint8_t> seeded_checkpoint_heatmap() {
  auto cfg = mnist_config();
  Checkpoint ck(cfg);
  const RngStream root(cfg.seed);
  ck.explainer.init(root.child(kInitExplainerStream));
  ck.approximator.init(root.child(kInitApproximatorStream));
  Dataset one;
  one.x = Tensor(Shape{1, 1, 28, 28});
  const auto x = golden_image();
  std::copy(x.begin(), x.end(), one.x.storage().begin());
  one.labels = {0};
  ModelBlackBox bb(build_blackbox_mnist());
  const auto record = explain_instance(ck, bb, one, 0);
  return heatmap_pgm(x, record.selected, ck.map);
}

inline std::vector<std::uint8_t> read_fixture(const std::string& name) {
  std::ifstream in(std::string(VIBI_FIXTURE_DIR) + "/" + name, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace vibi::testing
