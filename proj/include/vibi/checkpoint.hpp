#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "vibi/chunker.hpp"
#include "vibi/errors.hpp"
#include "vibi/nets.hpp"
#include "vibi/record_io.hpp"

namespace vibi {

enum class Objective { vibi, l2x };

struct VibiConfig {
  std::size_t k = 10;
  double tau = 0.7;
  double beta = 0.1;
  std::size_t samples = 4;  // L: relaxed masks per instance during training
  double lr = 1e-4;
  std::size_t batch = 100;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t eval_samples = 12;
  std::size_t patience = 5;            // epochs without validation improvement; 0 disables early stopping
  std::size_t validation_limit = 0;    // validation instances scored per epoch; 0 = all
  std::size_t steps_per_epoch = 0;     // batches per epoch; 0 = full pass
  Objective objective = Objective::vibi;
  bool soft_labels = false;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Shape input_shape;
  std::size_t classes = 2;
  nlohmann::json chunks;
  std::vector<LayerSpec> explainer;
  std::vector<LayerSpec> approximator;

  ChunkMap chunk_map() const { return ChunkMap::from_json(chunks); }

  void validate() const {
    const auto map = chunk_map();
    if (k < 1 || k > map.d()) {
      throw InvalidArgument("config: k = " + std::to_string(k) + " outside [1, d = " + std::to_string(map.d()) + "]");
    }
    VIBI_REQUIRE(tau > 0.0, "config: tau must be positive");
    VIBI_REQUIRE(beta >= 0.0, "config: beta must be non-negative");
    VIBI_REQUIRE(samples >= 1, "config: L must be at least 1");
    VIBI_REQUIRE(lr > 0.0, "config: lr must be positive");
    VIBI_REQUIRE(batch >= 1, "config: batch must be at least 1");
    VIBI_REQUIRE(epochs >= 1, "config: epochs must be at least 1");
    VIBI_REQUIRE(eval_samples >= 1, "config: eval_samples must be at least 1");
    VIBI_REQUIRE(classes >= 2, "config: at least two classes required");
    VIBI_REQUIRE(shape_size(input_shape) == map.feature_count(), "config: input shape " + shape_str(input_shape) +
                                                                     " does not match the chunk map");
    VIBI_REQUIRE(!explainer.empty() && !approximator.empty(), "config: explainer and approximator layers required");
  }

  nlohmann::json to_json() const {
    return {{"k", k},
            {"tau", tau},
            {"beta", beta},
            {"L", samples},
            {"lr", lr},
            {"batch", batch},
            {"epochs", epochs},
            {"seed", seed},
            {"eval_samples", eval_samples},
            {"patience", patience},
            {"validation_limit", validation_limit},
            {"steps_per_epoch", steps_per_epoch},
            {"objective", objective == Objective::vibi ? "vibi" : "l2x"},
            {"soft_labels", soft_labels},
            {"adam", {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"eps", adam_eps}}},
            {"input_shape", input_shape},
            {"classes", classes},
            {"chunks", chunks},
            {"explainer", layers_to_json(explainer)},
            {"approximator", layers_to_json(approximator)}};
  }

  /// Keys absent from `j` keep the values already in `base`.
  static VibiConfig from_json(const nlohmann::json& j) { return from_json(j, VibiConfig{}); }

  static VibiConfig from_json(const nlohmann::json& j, VibiConfig base) {
    VIBI_REQUIRE(j.is_object(), "config: expected a JSON object");
    auto& c = base;
    for (const auto& [key, v] : j.items()) {
      try {
        if (key == "k") c.k = v.get<std::size_t>();
        else if (key == "tau") c.tau = v.get<double>();
        else if (key == "beta") c.beta = v.get<double>();
        else if (key == "L") c.samples = v.get<std::size_t>();
        else if (key == "lr") c.lr = v.get<double>();
        else if (key == "batch") c.batch = v.get<std::size_t>();
        else if (key == "epochs") c.epochs = v.get<std::size_t>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "eval_samples") c.eval_samples = v.get<std::size_t>();
        else if (key == "patience") c.patience = v.get<std::size_t>();
        else if (key == "validation_limit") c.validation_limit = v.get<std::size_t>();
        else if (key == "steps_per_epoch") c.steps_per_epoch = v.get<std::size_t>();
        else if (key == "objective") {
          const auto s = v.get<std::string>();
          if (s == "vibi") c.objective = Objective::vibi;
          else if (s == "l2x") c.objective = Objective::l2x;
          else throw InvalidArgument("config: objective must be \"vibi\" or \"l2x\", got \"" + s + "\"");
        } else if (key == "soft_labels") c.soft_labels = v.get<bool>();
        else if (key == "adam") {
          for (const auto& [ak, av] : v.items()) {
            if (ak == "beta1") c.adam_beta1 = av.get<double>();
            else if (ak == "beta2") c.adam_beta2 = av.get<double>();
            else if (ak == "eps") c.adam_eps = av.get<double>();
            else throw InvalidArgument("config: unknown key 'adam." + ak + "'");
          }
        } else if (key == "input_shape") c.input_shape = v.get<Shape>();
        else if (key == "classes") c.classes = v.get<std::size_t>();
        else if (key == "chunks") c.chunks = v;
        else if (key == "explainer") c.explainer = layers_from_json(v);
        else if (key == "approximator") c.approximator = layers_from_json(v);
        else throw InvalidArgument("config: unknown key '" + key + "'");
      } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config: bad value for '" + key + "': " + e.what());
      }
    }
    return c;
  }
};

/// Per-epoch means plus every batch loss, in training order.
struct TrainTrace {
  std::vector<float> batch_loss;
  std::vector<float> epoch_loss;
  std::vector<float> epoch_nll;
  std::vector<float> epoch_kl;
  std::vector<float> val_fidelity;
  std::size_t best_epoch = 0;

  friend bool operator==(const TrainTrace&, const TrainTrace&) = default;
};

/// Trained explainer + approximator with the configuration that produced them.
struct Checkpoint {
  VibiConfig config;
  ChunkMap map;
  Model explainer;
  Model approximator;
  TrainTrace trace;

  explicit Checkpoint(VibiConfig cfg)
      : config(std::move(cfg)),
        map(config.chunk_map()),
        explainer(config.input_shape, config.explainer),
        approximator(config.input_shape, config.approximator) {
    config.validate();
    VIBI_REQUIRE(explainer.output_size() == map.d(), "checkpoint: explainer emits " +
                                                         std::to_string(explainer.output_size()) + " scores for " +
                                                         std::to_string(map.d()) + " chunks");
    VIBI_REQUIRE(approximator.output_size() == config.classes,
                 "checkpoint: approximator emits " + std::to_string(approximator.output_size()) + " classes, expected " +
                     std::to_string(config.classes));
  }

  Container to_container() const {
    Container c;
    c.header = {{"format", "vibi-checkpoint"}, {"config", config.to_json()}, {"best_epoch", trace.best_epoch}};
    for (const auto& p : explainer.params()) c.records.push_back(Record::from_tensor("explainer." + p.name, p.value));
    for (const auto& p : approximator.params()) {
      c.records.push_back(Record::from_tensor("approximator." + p.name, p.value));
    }
    c.records.push_back(Record::from_vector("trace.batch_loss", trace.batch_loss));
    c.records.push_back(Record::from_vector("trace.epoch_loss", trace.epoch_loss));
    c.records.push_back(Record::from_vector("trace.epoch_nll", trace.epoch_nll));
    c.records.push_back(Record::from_vector("trace.epoch_kl", trace.epoch_kl));
    c.records.push_back(Record::from_vector("trace.val_fidelity", trace.val_fidelity));
    return c;
  }

  static Checkpoint from_container(const Container& c) {
    if (c.header.value("format", "") != "vibi-checkpoint") {
      throw DataError("checkpoint: header format is not \"vibi-checkpoint\"");
    }
    Checkpoint ck(VibiConfig::from_json(c.header.at("config")));
    auto fill = [&](Model& m, const std::string& prefix) {
      for (auto& p : m.params()) {
        const auto& r = c.find(prefix + p.name);
        auto t = r.to_tensor();
        if (t.shape() != p.value.shape()) {
          throw DataError("checkpoint: record '" + r.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(p.value.shape()));
        }
        p.value = std::move(t);
      }
    };
    fill(ck.explainer, "explainer.");
    fill(ck.approximator, "approximator.");
    ck.trace.batch_loss = c.find("trace.batch_loss").data;
    ck.trace.epoch_loss = c.find("trace.epoch_loss").data;
    ck.trace.epoch_nll = c.find("trace.epoch_nll").data;
    ck.trace.epoch_kl = c.find("trace.epoch_kl").data;
    ck.trace.val_fidelity = c.find("trace.val_fidelity").data;
    ck.trace.best_epoch = c.header.value("best_epoch", std::size_t{0});
    return ck;
  }

  std::vector<std::uint8_t> bytes() const { return encode(to_container()); }
  void save(const std::string& path) const { save_container(path, to_container()); }
  static Checkpoint load(const std::string& path) {
    try {
      return from_container(load_container(path));
    } catch (const LookupError& e) {
      throw DataError(path + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw DataError(path + ": " + e.what());
    }
  }
};

}  // namespace vibi
