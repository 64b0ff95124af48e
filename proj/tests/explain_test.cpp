#include <gtest/gtest.h>

#include <algorithm>

#include "golden.hpp"

namespace vibi {
namespace {

TEST(Heatmap, FixedSelectionMatchesGolden) {
  const auto golden = testing::read_fixture("heatmap-fixed-selection.pgm");
  ASSERT_EQ(golden.size(), 13u + 784u);
  EXPECT_EQ(testing::fixed_selection_heatmap(), golden);
}

TEST(Heatmap, SeededCheckpointMatchesGolden) {
  const auto golden = testing::read_fixture("heatmap-seeded-checkpoint.pgm");
  const auto pgm = testing::seeded_checkpoint_heatmap();
  EXPECT_EQ(pgm, golden);
  // Ten 4x4 patches at full intensity, possibly plus clamped input pixels.
  EXPECT_GE(std::count(pgm.begin() + 13, pgm.end(), 255), 160);
}

TEST(Heatmap, HeaderAndPixelRule) {
  const auto map = ChunkMap::grid(4, 8, 2, 4);
  std::vector<float> x(32, 0.5f);
  x[0] = -1.0f;
  x[1] = 2.0f;
  const std::vector<std::size_t> selected{3};
  const auto pgm = heatmap_pgm(x, selected, map);
  const std::string header(pgm.begin(), pgm.begin() + 11);
  EXPECT_EQ(header, "P5\n8 4\n255\n");
  EXPECT_EQ(pgm[11 + 0], 0);
  EXPECT_EQ(pgm[11 + 1], 255);
  EXPECT_EQ(pgm[11 + 2], 128);
  EXPECT_EQ(pgm[11 + 2 * 8 + 4], 255);  // patch 3 = rows 2-3, cols 4-7
  EXPECT_EQ(pgm[11 + 2 * 8 + 3], 128);
}

TEST(Heatmap, FourPatchesHighlightSixtyFourPixels) {
  const std::vector<float> x(784, 0.0f);
  const std::vector<std::size_t> selected{0, 6, 24, 48};
  const auto pgm = heatmap_pgm(x, selected, ChunkMap::grid(28, 28, 4, 4));
  EXPECT_EQ(std::count(pgm.begin() + 13, pgm.end(), 255), 64);
}

TEST(Heatmap, TokenChunksRejected) {
  std::vector<float> x(32, 0.0f);
  const std::vector<std::size_t> selected{0};
  EXPECT_THROW(heatmap_pgm(x, selected, ChunkMap::tokens(8, 1, 4)), InvalidArgument);
}

TEST(Explain, RecordFieldsAndErrors) {
  SynthSpec spec;
  spec.n = 50;
  const auto task = gen_synth(spec, 3);
  auto cfg = synth_config(spec);
  Checkpoint ck(cfg);
  ck.explainer.init(RngStream(0).child(1));
  ck.approximator.init(RngStream(0).child(2));
  const auto r = explain_instance(ck, *task.blackbox, task.data, 7);
  EXPECT_EQ(r.selected.size(), 2u);
  EXPECT_EQ(r.probabilities.size(), 8u);
  EXPECT_EQ(r.blackbox_label, task.data.labels[7]);
  ASSERT_TRUE(r.note.has_value());
  const auto j = r.to_json();
  for (const char* key : {"instance", "selected", "probabilities", "blackbox_label", "approximator_label", "k",
                          "chunk_map", "note"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_THROW(explain_instance(ck, *task.blackbox, task.data, 50), LookupError);
}

}  // namespace
}  // namespace vibi
