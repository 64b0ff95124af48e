#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "vibi/chunker.hpp"
#include "vibi/nets.hpp"
#include "vibi/rng.hpp"

namespace vibi {

/// Instances stacked on axis 0 plus optional labels and planted ground truth.
struct Dataset {
  Tensor x;                            // [N, instance shape...]
  std::vector<std::size_t> labels;     // source labels, empty when unknown
  std::vector<std::size_t> relevant;   // planted chunks (synthetic tasks only)

  std::size_t size() const { return x.dim(0); }
  Shape instance_shape() const { return Shape(x.shape().begin() + 1, x.shape().end()); }
  std::size_t features() const { return x.size() / size(); }

  Dataset slice(std::size_t begin, std::size_t end) const {
    VIBI_REQUIRE(begin < end && end <= size(), "dataset: bad slice");
    Shape s = x.shape();
    s[0] = end - begin;
    const auto f = static_cast<std::ptrdiff_t>(features());
    Dataset out;
    out.x = Tensor(s, std::vector<float>(x.storage().begin() + static_cast<std::ptrdiff_t>(begin) * f,
                                         x.storage().begin() + static_cast<std::ptrdiff_t>(end) * f));
    if (!labels.empty()) out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
    out.relevant = relevant;
    return out;
  }

  /// Rows at the given indices, in order.
  Dataset rows(std::span<const std::size_t> idx) const {
    VIBI_REQUIRE(!idx.empty(), "dataset: empty row selection");
    Shape s = x.shape();
    s[0] = idx.size();
    const std::size_t f = features();
    Dataset out;
    out.x = Tensor(s);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>(idx[r] * f), f,
                  out.x.storage().begin() + static_cast<std::ptrdiff_t>(r * f));
      if (!labels.empty()) out.labels.push_back(labels[idx[r]]);
    }
    out.relevant = relevant;
    return out;
  }
};

struct Splits {
  Dataset train, validation, test;
};

/// 80/10/10 split in stored order.
inline Splits split_80_10_10(const Dataset& d) {
  const std::size_t n = d.size();
  const std::size_t a = n * 8 / 10, b = n * 9 / 10;
  VIBI_REQUIRE(a > 0 && b > a && n > b, "dataset too small to split 80/10/10");
  return {d.slice(0, a), d.slice(a, b), d.slice(b, n)};
}

// ---------------------------------------------------------------- IDX files

struct IdxArray {
  std::uint8_t type = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) {
    throw DataError(path + ": truncated header at offset " + std::to_string(offset) + " (file has " +
                    std::to_string(buf.size()) + " bytes)");
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(path + ": cannot open");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Parses an unsigned-byte IDX file (magic 0x0000080N, N = rank).
inline IdxArray parse_idx(const std::vector<std::uint8_t>& buf, const std::string& path = "<idx>") {
  const std::uint32_t magic = detail::read_be32(buf, 0, path);
  if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08) {
    char hex[11];
    std::snprintf(hex, sizeof hex, "0x%08x", magic);
    throw DataError(path + ": bad magic " + std::string(hex) + " at offset 0 (expected unsigned-byte IDX)");
  }
  IdxArray a;
  a.type = 0x08;
  const std::size_t rank = magic & 0xff;
  if (rank == 0) {
    throw DataError(path + ": IDX rank 0 at offset 3");
  }
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    a.dims.push_back(detail::read_be32(buf, 4 + 4 * i, path));
    count *= a.dims.back();
  }
  const std::size_t offset = 4 + 4 * rank;
  if (buf.size() - offset < count) {
    throw DataError(path + ": truncated payload at offset " + std::to_string(buf.size()) + ", expected " +
                    std::to_string(count) + " bytes from offset " + std::to_string(offset));
  }
  a.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(offset),
                 buf.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return a;
}

inline IdxArray load_idx(const std::string& path) { return parse_idx(detail::read_file(path), path); }

/// Images file (magic 0x00000803) -> [N, 1, rows, cols] scaled by 1/255.
inline Tensor load_idx_images(const std::string& path) {
  auto a = load_idx(path);
  if (a.dims.size() != 3) {
    throw DataError(path + ": image file must have magic 0x00000803 (rank 3), got rank " + std::to_string(a.dims.size()));
  }
  Tensor t(Shape{a.dims[0], 1, a.dims[1], a.dims[2]});
  for (std::size_t i = 0; i < a.bytes.size(); ++i) t[i] = static_cast<float>(a.bytes[i]) / 255.0f;
  return t;
}

/// Labels file (magic 0x00000801).
inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
  auto a = load_idx(path);
  if (a.dims.size() != 1) {
    throw DataError(path + ": label file must have magic 0x00000801 (rank 1), got rank " + std::to_string(a.dims.size()));
  }
  return {a.bytes.begin(), a.bytes.end()};
}

inline Dataset load_idx_dataset(const std::string& images, const std::string& labels) {
  Dataset d;
  d.x = load_idx_images(images);
  d.labels = load_idx_labels(labels);
  if (d.labels.size() != d.size()) {
    throw DataError(images + ": " + std::to_string(d.size()) + " images but " + labels + " has " +
                    std::to_string(d.labels.size()) + " labels");
  }
  return d;
}

/// MNIST under the 50k/10k/10k protocol: the first 50,000 training images
/// train, the last 10,000 validate, and the t10k files test.
inline Splits load_mnist(const std::string& dir) {
  auto train = load_idx_dataset(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
  auto test = load_idx_dataset(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
  VIBI_REQUIRE(train.size() > 10000, "MNIST training file too small for a 10k validation split");
  const std::size_t cut = train.size() - 10000;
  return {train.slice(0, cut), train.slice(cut, train.size()), std::move(test)};
}

// ------------------------------------------------------- synthetic task

/// Planted-chunk task: d chunks of `features_per_chunk` standard-normal
/// features; the label is 1 iff the sum of the relevant chunks' means is > 0.
struct SynthSpec {
  std::size_t chunks = 8;
  std::size_t features_per_chunk = 4;
  std::vector<std::size_t> relevant{2, 5};
  std::size_t n = 2000;

  ChunkMap chunk_map() const { return ChunkMap::tokens(chunks, 1, features_per_chunk); }
  Shape instance_shape() const { return {chunks, features_per_chunk}; }

  nlohmann::json to_json() const {
    return {{"chunks", chunks}, {"features_per_chunk", features_per_chunk}, {"relevant", relevant}, {"n", n}};
  }
  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    for (const auto& [k, v] : j.items()) {
      if (k == "chunks") s.chunks = v;
      else if (k == "features_per_chunk") s.features_per_chunk = v;
      else if (k == "relevant") s.relevant = v.get<std::vector<std::size_t>>();
      else if (k == "n") s.n = v;
      else throw InvalidArgument("synthetic spec: unknown key '" + k + "'");
    }
    return s;
  }
};

struct SynthTask {
  Dataset data;
  std::unique_ptr<RuleBlackBox> blackbox;
};

/// Standard normal via Box-Muller on the counter-based stream.
inline double standard_normal(RngStream& rng) {
  const double u1 = rng.uniform_open(), u2 = rng.uniform_open();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline SynthTask gen_synth(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.relevant.empty()) {
    throw InvalidArgument("synthetic spec: empty relevant chunk set");
  }
  VIBI_REQUIRE(spec.n > 0 && spec.chunks > 0 && spec.features_per_chunk > 0, "synthetic spec: sizes must be positive");
  auto map = spec.chunk_map();
  auto bb = make_rule_blackbox(map, spec.relevant, spec.instance_shape());
  Shape s{spec.n};
  const Shape inst = spec.instance_shape();
  s.insert(s.end(), inst.begin(), inst.end());
  SynthTask task{{Tensor(s), {}, bb->relevant()}, nullptr};
  const std::size_t f = map.feature_count();
  RngStream root(seed);
  for (std::size_t i = 0; i < spec.n; ++i) {
    RngStream rng = root.child(i);
    for (std::size_t k = 0; k < f; ++k) task.data.x[i * f + k] = static_cast<float>(standard_normal(rng));
  }
  task.data.labels = bb->labels(task.data.x);
  task.blackbox = std::move(bb);
  return task;
}

}  // namespace vibi
