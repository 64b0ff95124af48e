#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vibi/checkpoint.hpp"
#include "vibi/data.hpp"
#include "vibi/eval.hpp"
#include "vibi/sampler.hpp"

namespace vibi {

struct ExplanationRecord {
  std::size_t instance = 0;
  std::vector<std::size_t> selected;    // ascending
  std::vector<double> probabilities;    // p_j(x), sums to 1
  std::size_t blackbox_label = 0;
  std::size_t approximator_label = 0;   // from the hard top-k masked input
  std::size_t k = 0;
  nlohmann::json chunk_map;
  std::optional<std::string> note;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"instance", instance},
                        {"selected", selected},
                        {"probabilities", probabilities},
                        {"blackbox_label", blackbox_label},
                        {"approximator_label", approximator_label},
                        {"k", k},
                        {"chunk_map", chunk_map}};
    if (note) j["note"] = *note;
    return j;
  }
};

/// Binary PGM (P5, maxval 255) of one grid-chunked image: pixels of selected
/// chunks are 255, others the input scaled to [0, 255].
inline std::vector<std::uint8_t> heatmap_pgm(std::span<const float> x, std::span<const std::size_t> selected,
                                             const ChunkMap& map) {
  VIBI_REQUIRE(map.kind() == ChunkKind::grid_patch, "heatmap: grid chunk map required");
  VIBI_REQUIRE(x.size() == map.feature_count(), "heatmap: input does not match chunk map");
  const auto& g = map.grid_geometry();
  const std::string header = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  std::vector<bool> on(map.d(), false);
  for (auto j : selected) on.at(j) = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (on[map.owner(i)]) {
      out.push_back(255);
    } else {
      const float v = std::clamp(x[i], 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return out;
}

inline ExplanationRecord explain_instance(const Checkpoint& ck, const BlackBox& bb, const Dataset& data,
                                          std::size_t instance) {
  if (instance >= data.size()) {
    throw LookupError("explain: instance " + std::to_string(instance) + " out of range (" +
                      std::to_string(data.size()) + " instances)");
  }
  const auto one = data.slice(instance, instance + 1);
  const auto logp = explainer_log_probs(ck, one.x);
  ExplanationRecord r;
  r.instance = instance;
  r.k = ck.config.k;
  r.chunk_map = ck.map.to_json();
  for (auto v : logp.data()) r.probabilities.push_back(std::exp(static_cast<double>(v)));
  r.selected = hard_topk(logp.data(), ck.config.k).selected;
  r.blackbox_label = bb.labels(one.x).front();
  r.approximator_label = rationale_predictions(ck, one).front();
  if (ck.map.kind() != ChunkKind::grid_patch) r.note = "heatmap not available for token chunks";
  return r;
}

}  // namespace vibi
