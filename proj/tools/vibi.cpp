#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "vibi/run_config.hpp"
#include "vibi/vibi.hpp"

namespace fs = std::filesystem;
using namespace vibi;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::size_t> k, epochs, batch, samples, eval_samples, steps_per_epoch;
  std::optional<double> tau, beta, lr;
  std::string objective;
  std::string mnist_dir, dataset, blackbox;
};

void add_run_flags(CLI::App* cmd, Overrides& o, bool training) {
  cmd->add_option("--config", o.config, "Run config (JSON)");
  cmd->add_option("--out", o.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seed", o.seed, "Run seed (default: config, then VIBI_SEED, then 0)");
  cmd->add_option("--data-seed", o.data_seed, "Synthetic data seed");
  cmd->add_option("--mnist-dir", o.mnist_dir, "Directory with the MNIST IDX files");
  cmd->add_option("--dataset", o.dataset, "Dataset file from gen-synth");
  cmd->add_option("--blackbox", o.blackbox, "Black-box file");
  if (!training) return;
  cmd->add_option("--k", o.k, "Chunks selected");
  cmd->add_option("--tau", o.tau, "Gumbel-softmax temperature");
  cmd->add_option("--beta", o.beta, "Compression trade-off");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch", o.batch, "Batch size");
  cmd->add_option("--L", o.samples, "Relaxed masks per instance during training");
  cmd->add_option("--eval-samples", o.eval_samples, "Relaxed masks per instance for approximator fidelity");
  cmd->add_option("--steps-per-epoch", o.steps_per_epoch, "Batches per epoch (0 = full pass)");
  cmd->add_option("--objective", o.objective, "vibi or l2x")->check(CLI::IsMember({"vibi", "l2x"}));
}

RunConfig resolve(const Overrides& o) {
  const auto default_seed = env_seed();
  nlohmann::json j = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) {
      throw DataError(o.config + ": cannot open run config");
    }
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidArgument(o.config + ": malformed JSON: " + e.what());
    }
  }
  VIBI_REQUIRE(j.is_object(), "run config: expected a JSON object");
  auto& v = j["vibi"];
  if (v.is_null()) v = nlohmann::json::object();
  auto& data = j["data"];
  if (data.is_null()) data = nlohmann::json::object();
  if (o.seed) v["seed"] = *o.seed;
  if (o.k) v["k"] = *o.k;
  if (o.tau) v["tau"] = *o.tau;
  if (o.beta) v["beta"] = *o.beta;
  if (o.lr) v["lr"] = *o.lr;
  if (o.epochs) v["epochs"] = *o.epochs;
  if (o.batch) v["batch"] = *o.batch;
  if (o.samples) v["L"] = *o.samples;
  if (o.eval_samples) v["eval_samples"] = *o.eval_samples;
  if (o.steps_per_epoch) v["steps_per_epoch"] = *o.steps_per_epoch;
  if (!o.objective.empty()) v["objective"] = o.objective;
  if (o.data_seed) data["seed"] = *o.data_seed;
  if (!o.mnist_dir.empty()) data["mnist_dir"] = o.mnist_dir;
  if (!o.dataset.empty()) data["dataset"] = o.dataset;
  if (!o.blackbox.empty()) j["blackbox"] = o.blackbox;
  if (!o.out.empty()) j["output_dir"] = o.out;
  return RunConfig::from_json(j, default_seed);
}

fs::path prepare_output(const RunConfig& rc) {
  fs::path dir(rc.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw DataError(dir.string() + ": cannot create output directory: " + ec.message());
  }
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(path.string() + ": cannot open for writing");
  }
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string abs_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

const Dataset& pick_split(const LoadedTask& t, const std::string& split) {
  if (split == "train") return t.splits.train;
  if (split == "validation") return t.splits.validation;
  if (split == "test") return t.splits.test;
  throw InvalidArgument("unknown split '" + split + "'");
}

void log_epoch(const EpochStats& s) {
  std::fprintf(stderr, "epoch %zu loss %.5f nll %.5f kl %.5f", s.epoch, s.loss, s.nll, s.kl);
  if (s.val_fidelity) std::fprintf(stderr, " val_fidelity %.4f", *s.val_fidelity);
  std::fprintf(stderr, "\n");
}

int cmd_gen_synth(const Overrides& o) {
  auto rc = resolve(o);
  VIBI_REQUIRE(rc.task == TaskKind::synth, "gen-synth: task must be \"synth\"");
  const auto dir = prepare_output(rc);
  const auto task = gen_synth(rc.synth, rc.data_seed);
  const auto data_path = dir / "dataset.vibi", bb_path = dir / "blackbox.vibi";
  save_dataset(data_path.string(), task.data, {{"synth", rc.synth.to_json()}, {"seed", rc.data_seed}});
  save_rule_blackbox(bb_path.string(), rc.synth);
  rc.dataset = abs_path(data_path);
  rc.blackbox = abs_path(bb_path);
  write_json(dir / "run.json", rc.to_json());
  std::cout << nlohmann::json{{"dataset", rc.dataset}, {"blackbox", rc.blackbox}, {"n", task.data.size()}}.dump()
            << "\n";
  return kOk;
}

int cmd_train_blackbox(const Overrides& o) {
  auto rc = resolve(o);
  const auto dir = prepare_output(rc);
  const auto bb_path = dir / "blackbox.vibi";
  nlohmann::json report;
  if (rc.task == TaskKind::synth) {
    save_rule_blackbox(bb_path.string(), rc.synth);
    report = {{"kind", "rule"}, {"relevant", rc.synth.relevant}};
  } else {
    const auto task = load_task(rc, false);
    auto model = build_blackbox_mnist();
    const auto trace = train_classifier(model, task.splits.train, rc.blackbox_training, [](const EpochStats& s) {
      std::fprintf(stderr, "epoch %zu loss %.5f\n", s.epoch, s.loss);
    });
    const double acc = classifier_accuracy(model, task.splits.test);
    report = {{"kind", "model"}, {"test_accuracy", acc}, {"loss", trace}, {"parameters", model.parameter_count()}};
    save_model_blackbox(bb_path.string(), model, {{"training", rc.blackbox_training.to_json()}, {"test_accuracy", acc}});
  }
  rc.blackbox = abs_path(bb_path);
  write_json(dir / "blackbox.json", report);
  write_json(dir / "run.json", rc.to_json());
  std::cout << report.dump() << "\n";
  return kOk;
}

int cmd_train_vibi(const Overrides& o) {
  auto rc = resolve(o);
  const auto dir = prepare_output(rc);
  const auto task = load_task(rc);
  const auto ck = train_vibi(task.splits.train, *task.blackbox, rc.vibi, &task.splits.validation, log_epoch);
  ck.save((dir / "checkpoint.vibi").string());
  write_json(dir / "run.json", rc.to_json());
  const nlohmann::json summary = {{"checkpoint", abs_path(dir / "checkpoint.vibi")},
                                  {"epochs_run", ck.trace.epoch_loss.size()},
                                  {"best_epoch", ck.trace.best_epoch},
                                  {"final_loss", ck.trace.epoch_loss.back()}};
  std::cout << summary.dump() << "\n";
  return kOk;
}

/// Run config for a checkpoint: --config, else run.json beside the checkpoint.
RunConfig config_for_checkpoint(Overrides o, const std::string& checkpoint) {
  if (o.config.empty()) {
    const auto sibling = fs::path(checkpoint).parent_path() / "run.json";
    if (!fs::exists(sibling)) {
      throw DataError(sibling.string() + ": no run config beside the checkpoint; pass --config");
    }
    o.config = sibling.string();
  }
  return resolve(o);
}

int cmd_eval_fidelity(const Overrides& o, const std::string& checkpoint, const std::string& split,
                      std::optional<std::size_t> samples, bool micro) {
  const auto rc = config_for_checkpoint(o, checkpoint);
  const auto ck = Checkpoint::load(checkpoint);
  const auto task = load_task(rc);
  const auto& data = pick_split(task, split);
  const auto labels = task.blackbox->labels(data.x);
  const std::size_t n_samples = samples.value_or(ck.config.eval_samples);
  nlohmann::json out = {{"split", split},
                        {"approximator", approximator_fidelity(ck, labels, data, n_samples).to_json(micro)},
                        {"rationale", rationale_fidelity(ck, labels, data).to_json(micro)}};
  if (!task.relevant.empty()) {
    const auto q = selection_quality(ck, data, task.relevant);
    out["selection"] = {{"precision", q.mean_precision}, {"recall", q.mean_recall}};
  }
  const auto dir = prepare_output(rc);
  write_json(dir / ("fidelity-" + split + ".json"), out);
  write_json(dir / "run.json", rc.to_json());
  std::cout << out.dump() << "\n";
  return kOk;
}

int cmd_explain(const Overrides& o, const std::string& checkpoint, const std::string& split, std::size_t instance) {
  const auto rc = config_for_checkpoint(o, checkpoint);
  const auto ck = Checkpoint::load(checkpoint);
  const auto task = load_task(rc);
  const auto& data = pick_split(task, split);
  const auto record = explain_instance(ck, *task.blackbox, data, instance);
  const auto dir = prepare_output(rc);
  const std::string stem = "explanation-" + split + "-" + std::to_string(instance);
  auto j = record.to_json();
  j["split"] = split;
  if (ck.map.kind() == ChunkKind::grid_patch) {
    const auto f = data.features();
    const auto pgm = heatmap_pgm(data.x.data().subspan(instance * f, f), record.selected, ck.map);
    write_bytes((dir / (stem + ".pgm")).string(), pgm);
    j["heatmap"] = abs_path(dir / (stem + ".pgm"));
  }
  write_json(dir / (stem + ".json"), j);
  write_json(dir / "run.json", rc.to_json());
  std::cout << j.dump() << "\n";
  return kOk;
}

int cmd_grid_search(const Overrides& o) {
  const auto rc = resolve(o);
  if (!rc.grid) {
    throw InvalidArgument("grid-search: run config needs a \"grid\" section");
  }
  const auto dir = prepare_output(rc);
  const auto task = load_task(rc);
  const auto result =
      grid_search(task.splits.train, task.splits.validation, *task.blackbox, rc.vibi, *rc.grid, rc.workers);
  write_json(dir / "grid.json", result.to_json());
  write_json(dir / "run.json", rc.to_json());
  std::cout << nlohmann::json{{"best_cell", result.best}, {"fidelity", result.cells[result.best].fidelity}}.dump()
            << "\n";
  return kOk;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(int code, const char* kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"exit_code", code}, {"message", one_line(message)}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information-bottleneck explanations for black-box classifiers"};
  app.require_subcommand(1);

  Overrides gen, bb, train, eval, explain, grid;
  add_run_flags(app.add_subcommand("gen-synth", "Generate the planted-chunk dataset and its rule black-box"), gen,
                false);
  add_run_flags(app.add_subcommand("train-blackbox", "Train the MNIST black-box (or write the synthetic rule)"), bb,
                false);
  add_run_flags(app.add_subcommand("train-vibi", "Train explainer and approximator"), train, true);

  auto* eval_cmd = app.add_subcommand("eval-fidelity", "Approximator and rationale fidelity of a checkpoint");
  add_run_flags(eval_cmd, eval, false);
  std::string eval_ckpt, eval_split = "test";
  std::optional<std::size_t> eval_samples;
  bool micro = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "train, validation or test");
  eval_cmd->add_option("--samples", eval_samples, "Relaxed masks per instance (default: checkpoint eval_samples)");
  eval_cmd->add_flag("--micro", micro, "Also report micro-averaged F1");

  auto* explain_cmd = app.add_subcommand("explain", "Export the explanation of one instance");
  add_run_flags(explain_cmd, explain, false);
  std::string explain_ckpt, explain_split = "test";
  std::size_t instance = 0;
  explain_cmd->add_option("--checkpoint", explain_ckpt, "Checkpoint file")->required();
  explain_cmd->add_option("--split", explain_split, "train, validation or test");
  explain_cmd->add_option("--instance", instance, "Instance index within the split")->required();

  add_run_flags(app.add_subcommand("grid-search", "Grid search over tau, lr, beta, k"), grid, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, "usage", e.what());
  }

  try {
    const auto& sub = *app.get_subcommands().front();
    const std::string name = sub.get_name();
    if (name == "gen-synth") return cmd_gen_synth(gen);
    if (name == "train-blackbox") return cmd_train_blackbox(bb);
    if (name == "train-vibi") return cmd_train_vibi(train);
    if (name == "eval-fidelity") return cmd_eval_fidelity(eval, eval_ckpt, eval_split, eval_samples, micro);
    if (name == "explain") return cmd_explain(explain, explain_ckpt, explain_split, instance);
    if (name == "grid-search") return cmd_grid_search(grid);
    return fail(kUsage, "usage", "unknown subcommand " + name);
  } catch (const NumericError& e) {
    return fail(kNumeric, "numeric", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const LookupError& e) {
    return fail(kData, "data", e.what());
  } catch (const InvalidArgument& e) {
    return fail(kUsage, "usage", e.what());
  } catch (const std::exception& e) {
    return fail(kData, "internal", e.what());
  }
}
