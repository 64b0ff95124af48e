#pragma once

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vibi/chunker.hpp"
#include "vibi/ops.hpp"
#include "vibi/rng.hpp"

namespace vibi {

struct LayerSpec {
  enum class Kind { conv2d, dense, relu, maxpool, mean, log_softmax, flatten };

  Kind kind = Kind::relu;
  std::size_t filters = 0;  // conv2d
  std::size_t kernel = 0;   // conv2d
  std::size_t pad = 0;      // conv2d
  std::size_t units = 0;    // dense
  std::size_t size = 0;     // maxpool window
  std::size_t axis = 0;     // mean: axis of the per-instance shape

  static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t pad = 0) {
    return {Kind::conv2d, filters, kernel, pad};
  }
  static LayerSpec dense(std::size_t units) { return {Kind::dense, 0, 0, 0, units}; }
  static LayerSpec relu() { return {Kind::relu}; }
  static LayerSpec maxpool(std::size_t size) { return {Kind::maxpool, 0, 0, 0, 0, size}; }
  static LayerSpec mean(std::size_t axis) { return {Kind::mean, 0, 0, 0, 0, 0, axis}; }
  static LayerSpec log_softmax() { return {Kind::log_softmax}; }
  static LayerSpec flatten() { return {Kind::flatten}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline nlohmann::json to_json(const LayerSpec& s) {
  using K = LayerSpec::Kind;
  switch (s.kind) {
    case K::conv2d: return {{"type", "conv2d"}, {"filters", s.filters}, {"kernel", s.kernel}, {"pad", s.pad}};
    case K::dense: return {{"type", "dense"}, {"units", s.units}};
    case K::relu: return {{"type", "relu"}};
    case K::maxpool: return {{"type", "maxpool"}, {"size", s.size}};
    case K::mean: return {{"type", "mean"}, {"axis", s.axis}};
    case K::log_softmax: return {{"type", "log_softmax"}};
    case K::flatten: return {{"type", "flatten"}};
  }
  return {};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  auto allow = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : j.items()) {
      if (k == "type") continue;
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
        throw InvalidArgument("layer '" + type + "': unknown key '" + k + "'");
      }
    }
  };
  if (type == "conv2d") {
    allow({"filters", "kernel", "pad"});
    return LayerSpec::conv(j.at("filters"), j.at("kernel"), j.value("pad", std::size_t{0}));
  }
  if (type == "dense") {
    allow({"units"});
    return LayerSpec::dense(j.at("units"));
  }
  if (type == "maxpool") {
    allow({"size"});
    return LayerSpec::maxpool(j.at("size"));
  }
  if (type == "mean") {
    allow({"axis"});
    return LayerSpec::mean(j.at("axis"));
  }
  allow({});
  if (type == "relu") return LayerSpec::relu();
  if (type == "log_softmax") return LayerSpec::log_softmax();
  if (type == "flatten") return LayerSpec::flatten();
  throw InvalidArgument("unknown layer type '" + type + "'");
}

inline nlohmann::json layers_to_json(std::span<const LayerSpec> specs) {
  auto arr = nlohmann::json::array();
  for (const auto& s : specs) arr.push_back(to_json(s));
  return arr;
}

inline std::vector<LayerSpec> layers_from_json(const nlohmann::json& arr) {
  VIBI_REQUIRE(arr.is_array(), "layer list must be a JSON array");
  std::vector<LayerSpec> out;
  for (const auto& j : arr) out.push_back(layer_from_json(j));
  return out;
}

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Feed-forward network over per-instance inputs of `input_shape`; the batch
/// axis is prepended at run time.
class Model {
 public:
  Model() = default;

  Model(Shape input_shape, std::vector<LayerSpec> specs)
      : input_shape_(std::move(input_shape)), specs_(std::move(specs)) {
    VIBI_REQUIRE(!specs_.empty(), "model: empty layer list");
    Shape s = input_shape_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& l = specs_[i];
      const std::string where = "model layer " + std::to_string(i) + ": ";
      using K = LayerSpec::Kind;
      switch (l.kind) {
        case K::conv2d: {
          VIBI_REQUIRE(s.size() == 3, where + "conv2d needs [C,H,W] input, got " + shape_str(s));
          VIBI_REQUIRE(l.filters > 0 && l.kernel > 0, where + "conv2d needs filters and kernel");
          VIBI_REQUIRE(s[1] + 2 * l.pad >= l.kernel && s[2] + 2 * l.pad >= l.kernel,
                       where + "kernel larger than input " + shape_str(s));
          params_.push_back({param_name(i, "weight"), Tensor(Shape{l.filters, s[0], l.kernel, l.kernel})});
          params_.push_back({param_name(i, "bias"), Tensor(Shape{l.filters})});
          s = {l.filters, s[1] + 2 * l.pad - l.kernel + 1, s[2] + 2 * l.pad - l.kernel + 1};
          break;
        }
        case K::dense:
          VIBI_REQUIRE(s.size() == 1, where + "dense needs flat input, got " + shape_str(s));
          VIBI_REQUIRE(l.units > 0, where + "dense needs units");
          params_.push_back({param_name(i, "weight"), Tensor(Shape{s[0], l.units})});
          params_.push_back({param_name(i, "bias"), Tensor(Shape{l.units})});
          s = {l.units};
          break;
        case K::maxpool:
          VIBI_REQUIRE(s.size() == 3 && l.size > 0 && s[1] >= l.size && s[2] >= l.size,
                       where + "maxpool needs [C,H,W] input at least the window size");
          s = {s[0], s[1] / l.size, s[2] / l.size};
          break;
        case K::mean:
          VIBI_REQUIRE(l.axis < s.size() && s.size() >= 2, where + "mean axis out of range");
          s.erase(s.begin() + static_cast<std::ptrdiff_t>(l.axis));
          break;
        case K::flatten:
          s = {shape_size(s)};
          break;
        case K::relu:
        case K::log_softmax:
          break;
      }
    }
    output_shape_ = s;
  }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t output_size() const { return shape_size(output_shape_); }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Fan-in scaled uniform init: weights ~ U(-b, b), b = sqrt(6 / fan_in); biases zero.
  void init(RngStream rng) {
    for (auto& p : params_) {
      if (p.name.ends_with(".bias")) {
        p.value.fill(0.0f);
        continue;
      }
      const auto& s = p.value.shape();
      const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : p.value.storage()) {
        v = static_cast<float>((2.0 * rng.uniform_open() - 1.0) * bound);
      }
    }
  }

  NamedTensor& param(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw LookupError("model: no parameter '" + name + "'");
  }

  /// Parameter leaves in params() order; differentiable when `trainable`.
  template <typename T>
  std::vector<Var<T>> bind(Graph<T>& g, bool trainable) const {
    std::vector<Var<T>> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) {
      auto t = p.value.template cast<T>();
      vars.push_back(trainable ? g.leaf(std::move(t)) : g.constant(std::move(t)));
    }
    return vars;
  }

  /// x: [B, input_shape...].
  template <typename T>
  Var<T> forward(Var<T> x, std::span<const Var<T>> params) const {
    VIBI_REQUIRE(params.size() == params_.size(), "model: parameter binding size mismatch");
    const auto& xs = x.shape();
    if (xs.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), xs.begin() + 1)) {
      throw InvalidArgument("model: input shape " + shape_str(xs) + " does not match [B]+" + shape_str(input_shape_));
    }
    const std::size_t batch = xs[0];
    std::size_t p = 0;
    Var<T> h = x;
    using K = LayerSpec::Kind;
    for (const auto& l : specs_) {
      switch (l.kind) {
        case K::conv2d:
          h = conv2d(h, params[p], params[p + 1], l.pad);
          p += 2;
          break;
        case K::dense:
          h = add_bias(matmul(h, params[p]), params[p + 1]);
          p += 2;
          break;
        case K::relu: h = relu(h); break;
        case K::maxpool: h = maxpool2d(h, l.size); break;
        case K::mean: h = mean(h, l.axis + 1); break;
        case K::log_softmax: h = log_softmax(h); break;
        case K::flatten: h = reshape(h, Shape{batch, h.value().size() / batch}); break;
      }
    }
    return h;
  }

  /// Inference without gradients, in slices of `slice` rows.
  Tensor predict(const Tensor& batch, std::size_t slice = 256) const {
    const std::size_t n = batch.dim(0), per = batch.size() / n;
    const std::size_t out_per = output_size();
    Tensor out(Shape{n, out_per});
    for (std::size_t start = 0; start < n; start += slice) {
      const std::size_t m = std::min(slice, n - start);
      Shape s = batch.shape();
      s[0] = m;
      Graph<float> g;
      auto xv = g.constant(Tensor(s, std::vector<float>(batch.storage().begin() + static_cast<std::ptrdiff_t>(start * per),
                                                         batch.storage().begin() + static_cast<std::ptrdiff_t>((start + m) * per))));
      auto params = bind(g, false);
      const auto& y = forward(xv, std::span<const Var<float>>(params)).value();
      std::copy(y.storage().begin(), y.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(start * out_per));
    }
    return out;
  }

  nlohmann::json to_json() const { return {{"input_shape", input_shape_}, {"layers", layers_to_json(specs_)}}; }

  static Model from_json(const nlohmann::json& j) {
    return Model(j.at("input_shape").get<Shape>(), layers_from_json(j.at("layers")));
  }

 private:
  static std::string param_name(std::size_t layer, const char* what) {
    return "layer" + std::to_string(layer) + "." + what;
  }

  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<NamedTensor> params_;
  Shape output_shape_;
};

/// Row-wise argmax; ties go to the lower class index.
inline std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  const std::size_t n = scores.dim(0), c = scores.size() / n;
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = scores.data().data() + i * c;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
  }
  return out;
}

/// The system being explained. Only predictions are observable.
class BlackBox {
 public:
  virtual ~BlackBox() = default;
  virtual std::size_t classes() const = 0;
  virtual Shape input_shape() const = 0;
  /// [B, input_shape...] -> [B, classes] log-probabilities.
  virtual Tensor predict(const Tensor& batch) const = 0;

  std::vector<std::size_t> labels(const Tensor& batch) const { return argmax_rows(predict(batch)); }
};

class ModelBlackBox final : public BlackBox {
 public:
  explicit ModelBlackBox(Model model) : model_(std::move(model)) {}
  std::size_t classes() const override { return model_.output_size(); }
  Shape input_shape() const override { return model_.input_shape(); }
  Tensor predict(const Tensor& batch) const override { return model_.predict(batch); }
  const Model& model() const { return model_; }

 private:
  Model model_;
};

/// Planted-rule oracle: class 1 iff the summed means of the relevant chunks
/// exceed `threshold`, else class 0 (so an all-zero input is class 0). Every
/// other chunk is ignored.
class RuleBlackBox final : public BlackBox {
 public:
  RuleBlackBox(ChunkMap map, std::vector<std::size_t> relevant, Shape input_shape, double threshold = 0.0)
      : map_(std::move(map)), relevant_(std::move(relevant)), input_shape_(std::move(input_shape)), threshold_(threshold) {
    VIBI_REQUIRE(!relevant_.empty(), "rule black-box: empty relevant chunk set");
    for (auto j : relevant_) {
      if (j >= map_.d()) {
        throw InvalidArgument("rule black-box: chunk " + std::to_string(j) + " not in chunk map of " +
                              std::to_string(map_.d()));
      }
    }
    VIBI_REQUIRE(shape_size(input_shape_) == map_.feature_count(), "rule black-box: input shape does not match chunk map");
    std::sort(relevant_.begin(), relevant_.end());
  }

  std::size_t classes() const override { return 2; }
  Shape input_shape() const override { return input_shape_; }
  const std::vector<std::size_t>& relevant() const { return relevant_; }

  int label_of(std::span<const float> x) const {
    double score = 0.0;
    for (auto j : relevant_) {
      double s = 0.0;
      for (auto i : map_.members(j)) s += x[i];
      score += s / static_cast<double>(map_.members(j).size());
    }
    return score > threshold_ ? 1 : 0;
  }

  Tensor predict(const Tensor& batch) const override {
    const std::size_t n = batch.dim(0), f = map_.feature_count();
    VIBI_REQUIRE(batch.size() == n * f, "rule black-box: input shape mismatch");
    static const float hi = std::log(1.0f - 1e-6f), lo = std::log(1e-6f);
    Tensor out(Shape{n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      const int y = label_of(batch.data().subspan(i * f, f));
      out[i * 2] = y == 0 ? hi : lo;
      out[i * 2 + 1] = y == 1 ? hi : lo;
    }
    return out;
  }

 private:
  ChunkMap map_;
  std::vector<std::size_t> relevant_;
  Shape input_shape_;
  double threshold_;
};

inline std::unique_ptr<RuleBlackBox> make_rule_blackbox(const ChunkMap& map, std::vector<std::size_t> relevant,
                                                        Shape input_shape) {
  return std::make_unique<RuleBlackBox>(map, std::move(relevant), std::move(input_shape));
}

/// MNIST black-box: conv5(10) -> pool2 -> relu -> conv5(20) -> pool2 -> relu -> dense(50) -> relu -> dense(10) -> log-softmax.
/// ReLU follows each pooling stage and the hidden dense layer.
inline std::vector<LayerSpec> mnist_blackbox_layers() {
  using L = LayerSpec;
  return {L::conv(10, 5), L::maxpool(2), L::relu(), L::conv(20, 5), L::maxpool(2), L::relu(),
          L::flatten(),   L::dense(50),  L::relu(), L::dense(10),   L::log_softmax()};
}

inline Model build_blackbox_mnist() { return Model(Shape{1, 28, 28}, mnist_blackbox_layers()); }

/// Explainer head for grid chunks on single-channel images: two padded conv5
/// stages (8 and 16 filters) with ReLU, pooling until the feature map matches
/// the patch grid, then a 1x1 conv to one map and a log-softmax over chunks.
/// For 4x4 patches on 28x28 this is the 7x7 explainer; other patch sizes use
/// the same stack with as many 2x2 pools as the patch side allows.
inline std::vector<LayerSpec> grid_explainer_layers(const ChunkMap& map) {
  VIBI_REQUIRE(map.kind() == ChunkKind::grid_patch, "grid explainer: grid chunk map required");
  const auto& g = map.grid_geometry();
  VIBI_REQUIRE(g.patch_h == g.patch_w, "grid explainer: square patches required");
  std::size_t pools = 0;
  for (std::size_t p = g.patch_h; p > 1 && p % 2 == 0; p /= 2) ++pools;
  VIBI_REQUIRE((std::size_t{1} << pools) == g.patch_h, "grid explainer: patch side must be a power of two");
  using L = LayerSpec;
  std::vector<LayerSpec> out{L::conv(8, 5, 2), L::relu()};
  if (pools >= 1) out.push_back(L::maxpool(2));
  out.insert(out.end(), {L::conv(16, 5, 2), L::relu()});
  for (std::size_t i = 1; i < pools; ++i) out.push_back(L::maxpool(2));
  out.insert(out.end(), {L::conv(1, 1), L::flatten(), L::log_softmax()});
  return out;
}

/// MNIST approximator: conv5(32) -> relu -> pool2 -> conv5(64) -> relu -> pool2 -> dense(10) -> log-softmax.
inline std::vector<LayerSpec> mnist_approximator_layers(std::size_t classes = 10) {
  using L = LayerSpec;
  return {L::conv(32, 5), L::relu(), L::maxpool(2), L::conv(64, 5), L::relu(), L::maxpool(2),
          L::flatten(),   L::dense(classes), L::log_softmax()};
}

/// Dense stacks for flat token-feature inputs.
inline std::vector<LayerSpec> mlp_layers(std::size_t hidden, std::size_t out) {
  using L = LayerSpec;
  return {L::flatten(), L::dense(hidden), L::relu(), L::dense(hidden), L::relu(), L::dense(out), L::log_softmax()};
}

/// Log-probabilities over chunks for a batch. Head size must equal the chunk count.
template <typename T>
Var<T> explainer_forward(const Model& model, Var<T> x, std::span<const Var<T>> params, std::size_t d) {
  VIBI_REQUIRE(model.output_size() == d, "explainer: head size " + std::to_string(model.output_size()) +
                                             " does not match chunk count " + std::to_string(d));
  return model.forward(x, params);
}

/// Class log-probabilities from a masked input.
template <typename T>
Var<T> approximator_forward(const Model& model, Var<T> t, std::span<const Var<T>> params) {
  return model.forward(t, params);
}

}  // namespace vibi
