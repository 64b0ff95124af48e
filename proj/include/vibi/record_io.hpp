#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>
#include <vector>

#include "vibi/errors.hpp"
#include "vibi/tensor.hpp"

// Container shared by checkpoints, black-box files and datasets:
//
//   "VIBI" | u16 version = 1 | u32 header length | UTF-8 JSON header |
//   repeated { u16 name length | name | u8 rank | u32 dims[rank] | f32 data[] }
//
// All integers and floats little-endian.

namespace vibi {

static_assert(std::endian::native == std::endian::little, "record container assumes a little-endian host");

inline constexpr char kMagic[4] = {'V', 'I', 'B', 'I'};
inline constexpr std::uint16_t kFormatVersion = 1;

struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  static Record from_tensor(std::string name, const Tensor& t) {
    Record r{std::move(name), {}, t.storage()};
    for (auto d : t.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
    return r;
  }

  static Record from_vector(std::string name, std::vector<float> values) {
    const auto n = static_cast<std::uint32_t>(values.size());
    return {std::move(name), {n}, std::move(values)};
  }

  Tensor to_tensor() const {
    Shape s(dims.begin(), dims.end());
    return Tensor(std::move(s), data);
  }

  friend bool operator==(const Record&, const Record&) = default;
};

struct Container {
  nlohmann::json header;
  std::vector<Record> records;

  const Record& find(const std::string& name) const {
    for (const auto& r : records) {
      if (r.name == name) return r;
    }
    throw LookupError("container: no record '" + name + "'");
  }
};

namespace detail {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.insert(out.end(), b, b + sizeof(U));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw DataError(what_ + ": truncated at offset " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Container& c) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put<std::uint16_t>(out, kFormatVersion);
  const std::string header = c.header.dump();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& r : c.records) {
    VIBI_REQUIRE(r.name.size() <= 0xffff && r.dims.size() <= 0xff, "record: name or rank too long");
    std::size_t count = 1;
    for (auto d : r.dims) count *= d;
    VIBI_REQUIRE(count == r.data.size(), "record '" + r.name + "': data length does not match dims");
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) detail::put<std::uint32_t>(out, d);
    for (auto v : r.data) detail::put<float>(out, v);
  }
  return out;
}

inline Container decode(const std::vector<std::uint8_t>& buf, const std::string& what = "container") {
  detail::Reader in(buf, what);
  if (in.bytes(4) != std::string(kMagic, 4)) {
    throw DataError(what + ": bad magic, expected \"VIBI\"");
  }
  const auto version = in.get<std::uint16_t>();
  if (version != kFormatVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(version));
  }
  Container c;
  const auto len = in.get<std::uint32_t>();
  try {
    c.header = nlohmann::json::parse(in.bytes(len));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(what + ": malformed JSON header: " + e.what());
  }
  while (!in.done()) {
    Record r;
    r.name = in.bytes(in.get<std::uint16_t>());
    const auto rank = in.get<std::uint8_t>();
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      r.dims.push_back(in.get<std::uint32_t>());
      count *= r.dims.back();
    }
    r.data.resize(count);
    for (auto& v : r.data) v = in.get<float>();
    c.records.push_back(std::move(r));
  }
  return c;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(path + ": cannot open for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw DataError(path + ": write failed");
  }
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(path + ": cannot open");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_container(const std::string& path, const Container& c) { write_bytes(path, encode(c)); }
inline Container load_container(const std::string& path) { return decode(read_bytes(path), path); }

}  // namespace vibi
