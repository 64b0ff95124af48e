#pragma once

#include <cstddef>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "vibi/errors.hpp"
#include "vibi/ops.hpp"

namespace vibi {

enum class ChunkKind { grid_patch, token_group };

/// Partition of raw feature indices into d cognitive chunks.
class ChunkMap {
 public:
  struct Grid {
    std::size_t height, width, patch_h, patch_w;
  };
  struct Tokens {
    std::size_t n_tokens, group_size, features_per_token;
  };

  /// Image of height x width pixels cut into patch_h x patch_w patches, row-major patch order.
  static ChunkMap grid(std::size_t height, std::size_t width, std::size_t patch_h, std::size_t patch_w) {
    VIBI_REQUIRE(height > 0 && width > 0 && patch_h > 0 && patch_w > 0, "grid chunks: dimensions must be positive");
    if (height % patch_h != 0 || width % patch_w != 0) {
      throw InvalidArgument("grid chunks: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                            " does not divide image " + std::to_string(height) + "x" + std::to_string(width));
    }
    ChunkMap m;
    m.kind_ = ChunkKind::grid_patch;
    m.grid_ = {height, width, patch_h, patch_w};
    const std::size_t rows = height / patch_h, cols = width / patch_w;
    m.owner_.resize(height * width);
    m.members_.resize(rows * cols);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t j = (y / patch_h) * cols + x / patch_w;
        m.owner_[y * width + x] = j;
        m.members_[j].push_back(y * width + x);
      }
    }
    m.validate();
    return m;
  }

  /// Token sequence laid out token-major with `features_per_token` features each;
  /// chunk j owns tokens [j*group, (j+1)*group).
  static ChunkMap tokens(std::size_t n_tokens, std::size_t group_size, std::size_t features_per_token) {
    VIBI_REQUIRE(n_tokens > 0 && group_size > 0 && features_per_token > 0,
                 "token chunks: sizes must be positive");
    if (n_tokens % group_size != 0) {
      throw InvalidArgument("token chunks: group size " + std::to_string(group_size) + " does not divide " +
                            std::to_string(n_tokens) + " tokens");
    }
    ChunkMap m;
    m.kind_ = ChunkKind::token_group;
    m.tokens_ = {n_tokens, group_size, features_per_token};
    const std::size_t per_chunk = group_size * features_per_token;
    m.owner_.resize(n_tokens * features_per_token);
    m.members_.resize(n_tokens / group_size);
    for (std::size_t i = 0; i < m.owner_.size(); ++i) {
      m.owner_[i] = i / per_chunk;
      m.members_[i / per_chunk].push_back(i);
    }
    m.validate();
    return m;
  }

  std::size_t d() const { return members_.size(); }
  std::size_t feature_count() const { return owner_.size(); }
  ChunkKind kind() const { return kind_; }
  const Grid& grid_geometry() const { return grid_; }
  const Tokens& token_geometry() const { return tokens_; }

  /// Sorted raw feature indices of chunk j.
  std::span<const std::size_t> members(std::size_t j) const { return members_.at(j); }
  /// Chunk owning raw feature i.
  std::size_t owner(std::size_t i) const { return owner_.at(i); }
  std::span<const std::size_t> owners() const { return owner_; }

  nlohmann::json to_json() const {
    if (kind_ == ChunkKind::grid_patch) {
      return {{"kind", "grid"}, {"height", grid_.height}, {"width", grid_.width},
              {"patch_h", grid_.patch_h}, {"patch_w", grid_.patch_w}};
    }
    return {{"kind", "tokens"}, {"n_tokens", tokens_.n_tokens}, {"group_size", tokens_.group_size},
            {"features_per_token", tokens_.features_per_token}};
  }

  static ChunkMap from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "grid") {
      return grid(j.at("height"), j.at("width"), j.at("patch_h"), j.at("patch_w"));
    }
    if (kind == "tokens") {
      return tokens(j.at("n_tokens"), j.at("group_size"), j.at("features_per_token"));
    }
    throw InvalidArgument("chunk map: unknown kind '" + kind + "'");
  }

  friend bool operator==(const ChunkMap& a, const ChunkMap& b) {
    return a.kind_ == b.kind_ && a.members_ == b.members_;
  }

 private:
  ChunkMap() = default;

  void validate() const {
    std::vector<int> seen(owner_.size(), 0);
    std::size_t total = 0;
    for (const auto& m : members_) {
      if (m.empty()) {
        throw InvalidArgument("chunk map: empty chunk");
      }
      total += m.size();
      for (auto i : m) {
        if (i >= seen.size() || seen[i]++) {
          throw InvalidArgument("chunk map: member lists do not partition the features");
        }
      }
    }
    if (total != owner_.size()) {
      throw InvalidArgument("chunk map: member lists do not cover every feature");
    }
  }

  ChunkKind kind_ = ChunkKind::grid_patch;
  Grid grid_{};
  Tokens tokens_{};
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> owner_;
};

/// t_i = x_i * z_{chunk(i)} for a batch.
///
/// x holds [B, ...] with feature_count elements per row; z is [B, d]. The
/// result has x's shape. Differentiable in both x and z.
template <typename T>
Var<T> apply_mask(Var<T> x, Var<T> z, const ChunkMap& map) {
  const Shape xs = x.shape();
  VIBI_REQUIRE(!xs.empty(), "apply_mask: input needs a batch axis");
  const std::size_t batch = xs[0];
  const std::size_t features = x.value().size() / batch;
  if (features != map.feature_count()) {
    throw InvalidArgument("apply_mask: input has " + std::to_string(features) + " features, chunk map has " +
                          std::to_string(map.feature_count()));
  }
  if (z.shape() != Shape{batch, map.d()}) {
    throw InvalidArgument("apply_mask: mask shape " + shape_str(z.shape()) + " expected " +
                          shape_str(Shape{batch, map.d()}));
  }
  auto expanded = gather(z, 1, map.owners());
  auto flat = reshape(x, Shape{batch, features});
  return reshape(mul(flat, expanded), xs);
}

/// Single-instance convenience over plain vectors.
inline std::vector<float> apply_mask(std::span<const float> x, std::span<const float> z, const ChunkMap& map) {
  if (x.size() != map.feature_count() || z.size() != map.d()) {
    throw InvalidArgument("apply_mask: length mismatch");
  }
  for (auto v : z) {
    VIBI_REQUIRE(v >= 0.0f && v <= 1.0f, "apply_mask: mask weights must lie in [0,1]");
  }
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * z[map.owner(i)];
  }
  return out;
}

}  // namespace vibi
