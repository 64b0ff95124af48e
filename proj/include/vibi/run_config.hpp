#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vibi/checkpoint.hpp"
#include "vibi/data.hpp"
#include "vibi/presets.hpp"
#include "vibi/record_io.hpp"
#include "vibi/trainer.hpp"

namespace vibi {

enum class TaskKind { synth, mnist };

/// Declarative description of a run. Every section is optional in the file;
/// to_json() writes the filled-in defaults so the copy reproduces the run.
struct RunConfig {
  TaskKind task = TaskKind::synth;
  std::string mnist_dir;
  SynthSpec synth;
  std::uint64_t data_seed = 0;
  std::string dataset;       // dataset file written by gen-synth; empty = regenerate from `synth`
  std::string blackbox;      // black-box file; empty = rule oracle (synth only)
  BlackBoxTrainConfig blackbox_training;
  VibiConfig vibi;
  std::optional<GridSpace> grid;
  std::string output_dir = ".";
  std::size_t workers = 1;

  static VibiConfig task_defaults(TaskKind task, const SynthSpec& synth) {
    return task == TaskKind::mnist ? mnist_config() : synth_config(synth);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"task", task == TaskKind::mnist ? "mnist" : "synth"},
                        {"data", {{"mnist_dir", mnist_dir}, {"synth", synth.to_json()}, {"seed", data_seed},
                                  {"dataset", dataset}}},
                        {"blackbox", blackbox},
                        {"blackbox_training", blackbox_training.to_json()},
                        {"vibi", vibi.to_json()},
                        {"output_dir", output_dir},
                        {"workers", workers}};
    if (grid) j["grid"] = grid->to_json();
    return j;
  }

  /// Unknown keys anywhere are rejected. `default_seed` seeds the VIBI run and
  /// the synthetic data when the file does not.
  static RunConfig from_json(const nlohmann::json& j, std::uint64_t default_seed = 0) {
    VIBI_REQUIRE(j.is_object(), "run config: expected a JSON object");
    RunConfig r;
    r.data_seed = default_seed;
    if (j.contains("task")) {
      const auto t = j.at("task").get<std::string>();
      if (t == "synth") r.task = TaskKind::synth;
      else if (t == "mnist") r.task = TaskKind::mnist;
      else throw InvalidArgument("run config: task must be \"synth\" or \"mnist\", got \"" + t + "\"");
    }
    try {
      for (const auto& [key, v] : j.items()) {
        if (key == "task" || key == "vibi") continue;
        if (key == "data") {
          for (const auto& [dk, dv] : v.items()) {
            if (dk == "mnist_dir") r.mnist_dir = dv.get<std::string>();
            else if (dk == "synth") r.synth = SynthSpec::from_json(dv);
            else if (dk == "seed") r.data_seed = dv.get<std::uint64_t>();
            else if (dk == "dataset") r.dataset = dv.get<std::string>();
            else throw InvalidArgument("run config: unknown key 'data." + dk + "'");
          }
        } else if (key == "blackbox") r.blackbox = v.get<std::string>();
        else if (key == "blackbox_training") r.blackbox_training = BlackBoxTrainConfig::from_json(v);
        else if (key == "grid") r.grid = GridSpace::from_json(v);
        else if (key == "output_dir") r.output_dir = v.get<std::string>();
        else if (key == "workers") r.workers = v.get<std::size_t>();
        else throw InvalidArgument("run config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("run config: ") + e.what());
    }
    r.vibi = task_defaults(r.task, r.synth);
    r.vibi.seed = default_seed;
    if (j.contains("vibi")) r.vibi = VibiConfig::from_json(j.at("vibi"), r.vibi);
    r.vibi.validate();
    return r;
  }

  static RunConfig load(const std::string& path, std::uint64_t default_seed = 0) {
    std::ifstream in(path);
    if (!in) {
      throw DataError(path + ": cannot open run config");
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidArgument(path + ": malformed JSON: " + e.what());
    }
    return from_json(j, default_seed);
  }
};

/// VIBI_SEED when set and numeric, else 0.
inline std::uint64_t env_seed() {
  const char* s = std::getenv("VIBI_SEED");
  if (s == nullptr || *s == '\0') return 0;
  char* end = nullptr;
  const auto v = std::strtoull(s, &end, 10);
  if (*end != '\0') {
    throw InvalidArgument(std::string("VIBI_SEED is not an unsigned integer: '") + s + "'");
  }
  return v;
}

// ------------------------------------------------------------ artifact files

inline void save_dataset(const std::string& path, const Dataset& d, const nlohmann::json& meta) {
  Container c;
  c.header = {{"format", "vibi-dataset"}, {"meta", meta}};
  c.records.push_back(Record::from_tensor("x", d.x));
  c.records.push_back(Record::from_vector("labels", std::vector<float>(d.labels.begin(), d.labels.end())));
  c.records.push_back(Record::from_vector("relevant", std::vector<float>(d.relevant.begin(), d.relevant.end())));
  save_container(path, c);
}

inline Dataset load_dataset(const std::string& path) {
  const auto c = load_container(path);
  if (c.header.value("format", "") != "vibi-dataset") {
    throw DataError(path + ": not a dataset file");
  }
  Dataset d;
  try {
    d.x = c.find("x").to_tensor();
    for (float v : c.find("labels").data) d.labels.push_back(static_cast<std::size_t>(v));
    for (float v : c.find("relevant").data) d.relevant.push_back(static_cast<std::size_t>(v));
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (d.labels.size() != d.size()) {
    throw DataError(path + ": label count does not match instance count");
  }
  return d;
}

inline void save_model_blackbox(const std::string& path, const Model& m, const nlohmann::json& meta) {
  Container c;
  c.header = {{"format", "vibi-blackbox"}, {"kind", "model"}, {"model", m.to_json()}, {"meta", meta}};
  for (const auto& p : m.params()) c.records.push_back(Record::from_tensor(p.name, p.value));
  save_container(path, c);
}

inline void save_rule_blackbox(const std::string& path, const SynthSpec& spec) {
  Container c;
  c.header = {{"format", "vibi-blackbox"}, {"kind", "rule"}, {"synth", spec.to_json()}};
  save_container(path, c);
}

inline std::unique_ptr<BlackBox> load_blackbox(const std::string& path) {
  const auto c = load_container(path);
  if (c.header.value("format", "") != "vibi-blackbox") {
    throw DataError(path + ": not a black-box file");
  }
  try {
    const auto kind = c.header.at("kind").get<std::string>();
    if (kind == "rule") {
      const auto spec = SynthSpec::from_json(c.header.at("synth"));
      return make_rule_blackbox(spec.chunk_map(), spec.relevant, spec.instance_shape());
    }
    if (kind == "model") {
      auto m = Model::from_json(c.header.at("model"));
      for (auto& p : m.params()) {
        auto t = c.find(p.name).to_tensor();
        if (t.shape() != p.value.shape()) {
          throw DataError("record '" + p.name + "' has the wrong shape");
        }
        p.value = std::move(t);
      }
      return std::make_unique<ModelBlackBox>(std::move(m));
    }
    throw DataError("unknown black-box kind '" + kind + "'");
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const std::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ------------------------------------------------------------------- tasks

struct LoadedTask {
  Splits splits;
  std::unique_ptr<BlackBox> blackbox;
  std::vector<std::size_t> relevant;  // planted chunks, synthetic only
};

inline std::string mnist_dir_or_default(const RunConfig& rc) {
  if (!rc.mnist_dir.empty()) return rc.mnist_dir;
  const char* env = std::getenv("VIBI_MNIST_DIR");
  return env ? env : "data/mnist";
}

inline Dataset synth_data(const RunConfig& rc) {
  return rc.dataset.empty() ? gen_synth(rc.synth, rc.data_seed).data : load_dataset(rc.dataset);
}

/// Data splits plus the black-box. MNIST needs a trained black-box file.
inline LoadedTask load_task(const RunConfig& rc, bool need_blackbox = true) {
  LoadedTask t;
  if (rc.task == TaskKind::mnist) {
    t.splits = load_mnist(mnist_dir_or_default(rc));
    if (need_blackbox) {
      if (rc.blackbox.empty()) {
        throw DataError("mnist task needs a black-box file (run train-blackbox first)");
      }
      t.blackbox = load_blackbox(rc.blackbox);
    }
  } else {
    const auto data = synth_data(rc);
    t.relevant = data.relevant;
    t.splits = split_80_10_10(data);
    t.blackbox = rc.blackbox.empty()
                     ? std::unique_ptr<BlackBox>(make_rule_blackbox(rc.synth.chunk_map(), rc.synth.relevant,
                                                                    rc.synth.instance_shape()))
                     : load_blackbox(rc.blackbox);
  }
  if (t.blackbox && t.blackbox->input_shape() != rc.vibi.input_shape) {
    throw InvalidArgument("black-box input shape " + shape_str(t.blackbox->input_shape()) +
                          " does not match config input shape " + shape_str(rc.vibi.input_shape));
  }
  return t;
}

}  // namespace vibi
