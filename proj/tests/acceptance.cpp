// Acceptance suite: one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "golden.hpp"
#include "op_cases.hpp"
#include "stats.hpp"
#include "vibi/vibi.hpp"

namespace fs = std::filesystem;
using namespace vibi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome gradient_suite() {
  std::size_t runs = 0, failures = 0, checked = 0, skipped = 0;
  double worst_single = 0, worst_shadow = 0;
  std::string first_failure;
  auto record = [&](const std::string& name, std::uint64_t seed, const testing::CheckPair& r) {
    ++runs;
    checked += r.single.checked + r.shadow.checked;
    skipped += r.single.skipped.size() + r.shadow.skipped.size();
    worst_single = std::max(worst_single, r.single.max_rel_error);
    worst_shadow = std::max(worst_shadow, r.shadow.max_rel_error);
    if (!r.single.passed || !r.shadow.passed) {
      if (failures++ == 0) {
        first_failure = name + " seed " + std::to_string(seed) + ": " +
                        (r.single.passed ? r.shadow.diagnostic : r.single.diagnostic);
      }
    }
  };
  const auto cases = testing::op_cases();
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) record(c.name, seed, c.run(seed));
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) record("pipeline", seed, testing::pipeline_check(seed));
  auto detail = fmt("%zu ops + pipeline x 100 cases, max rel err %.2e (32-bit) %.2e (64-bit), %zu coordinates "
                    "checked, %zu skipped at kinks",
                    cases.size(), worst_single, worst_shadow, checked, skipped);
  if (failures) detail += ", " + std::to_string(failures) + " failed, first: " + first_failure;
  return {failures == 0 && runs == (cases.size() + 1) * 100, detail};
}

Outcome gumbel_max() {
  RngStream rng(20240601);
  const auto r = testing::gumbel_max_chi_square(rng, 8, 100000);
  return {r.statistic < testing::kChiSquare7At001,
          fmt("chi2 = %.3f, critical value %.4f (df 7, alpha 0.01)", r.statistic, testing::kChiSquare7At001)};
}

Outcome kl_identity() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dim(2, 64);
  std::gamma_distribution<double> gamma(0.5, 1.0);
  double worst = 0, worst_graph = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t d = dim(rng);
    std::vector<double> p(d);
    double s = 0;
    for (auto& v : p) s += (v = gamma(rng) + 1e-300);
    for (auto& v : p) v /= s;
    double direct = 0;
    for (auto v : p) direct += v * (std::log(v) - std::log(1.0 / static_cast<double>(d)));
    worst = std::max(worst, std::abs(kl_to_uniform(p) - direct));

    Graph<double> g;
    Tensor64 logp(Shape{1, d});
    for (std::size_t j = 0; j < d; ++j) logp[j] = std::log(p[j]);
    worst_graph = std::max(worst_graph, std::abs(kl_to_uniform(g.constant(logp)).value()[0] - direct));
  }
  double uniform_err = 0, onehot_err = 0;
  for (std::size_t d : {2, 8, 49, 100}) {
    const std::vector<double> u(d, 1.0 / static_cast<double>(d));
    uniform_err = std::max(uniform_err, std::abs(kl_to_uniform(u)));
    std::vector<double> e(d, 0.0);
    e[d / 2] = 1.0;
    onehot_err = std::max(onehot_err, std::abs(kl_to_uniform(e) - std::log(static_cast<double>(d))));
  }
  const double ftol = std::numeric_limits<float>::epsilon();
  return {worst <= 1e-6 && worst_graph <= 1e-6 && uniform_err <= ftol && onehot_err <= ftol,
          fmt("max |kl - direct| %.2e (graph %.2e); uniform %.1e; one-hot vs log d %.1e", worst, worst_graph,
              uniform_err, onehot_err)};
}

Outcome l2x_reduction() {
  SynthSpec spec;
  const auto task = gen_synth(spec, 0);
  const auto splits = split_80_10_10(task.data);
  auto vibi_cfg = synth_config(spec);
  vibi_cfg.beta = 0.0;
  auto l2x_cfg = vibi_cfg;
  l2x_cfg.objective = Objective::l2x;
  const auto a = train_vibi(splits.train, *task.blackbox, vibi_cfg);
  const auto b = train_vibi(splits.train, *task.blackbox, l2x_cfg);
  const auto ra = a.to_container().records, rb = b.to_container().records;
  std::size_t compared = 0, differing = 0;
  for (std::size_t i = 0; i < std::min(ra.size(), rb.size()); ++i) {
    if (ra[i].name == "trace.epoch_kl") continue;
    ++compared;
    differing += !(ra[i] == rb[i]);
  }
  const bool losses = a.trace.batch_loss == b.trace.batch_loss;
  return {ra.size() == rb.size() && differing == 0 && losses,
          fmt("%zu parameter/trace records compared, %zu differ; %zu batch losses %s", compared, differing,
              a.trace.batch_loss.size(), losses ? "identical" : "differ")};
}

struct SynthRun {
  Checkpoint ck;
  double recall, rationale, seconds;
};

SynthRun synth_run(std::uint64_t seed) {
  SynthSpec spec;
  const auto t0 = std::chrono::steady_clock::now();
  const auto task = gen_synth(spec, seed);
  const auto splits = split_80_10_10(task.data);
  auto cfg = synth_config(spec);
  cfg.seed = seed;
  auto ck = train_vibi(splits.train, *task.blackbox, cfg, &splits.validation);
  const double recall = selection_quality(ck, splits.test, task.data.relevant).mean_recall;
  const double rationale = rationale_fidelity(ck, *task.blackbox, splits.test).accuracy;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(ck), recall, rationale, secs};
}

Outcome synthetic_task(std::vector<SynthRun>& runs) {
  std::vector<double> recall, rationale;
  double slowest = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    runs.push_back(synth_run(seed));
    const auto& r = runs.back();
    recall.push_back(r.recall);
    rationale.push_back(r.rationale);
    slowest = std::max(slowest, r.seconds);
    per_seed << (seed ? ", " : "") << fmt("%.3f/%.3f", r.recall, r.rationale);
  }
  const double mr = median3(recall), mf = median3(rationale);
  return {mr >= 0.95 && mf >= 0.95 && slowest < 180.0,
          fmt("median recall %.3f, median rationale fidelity %.3f (per seed recall/rationale: %s), slowest seed %.1f s",
              mr, mf, per_seed.str().c_str(), slowest)};
}

Outcome mnist(const std::string& dir, std::size_t epochs) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) {
    return {false, "MNIST IDX files not found in " + dir + " (run tools/fetch_mnist.sh)"};
  }
  const auto splits = load_mnist(dir);
  auto model = build_blackbox_mnist();
  train_classifier(model, splits.train, BlackBoxTrainConfig{});
  const double bb_acc = classifier_accuracy(model, splits.test);
  const ModelBlackBox bb(std::move(model));

  auto cfg = mnist_config();
  cfg.epochs = epochs;
  const auto ck = train_vibi(splits.train, bb, cfg, &splits.validation, [&](const EpochStats& s) {
    std::fprintf(stderr, "mnist epoch %zu loss %.4f val %.4f (%.0f s)\n", s.epoch, s.loss, s.val_fidelity.value_or(-1),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  });
  const auto labels = bb.labels(splits.test.x);
  const double approx = approximator_fidelity(ck, labels, splits.test).accuracy;
  const double rationale = rationale_fidelity(ck, labels, splits.test).accuracy;
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  return {bb_acc >= 0.95 && approx >= 0.90 && rationale >= 0.80,
          fmt("black-box test acc %.4f, approximator fidelity %.4f, rationale fidelity %.4f; %zu of %zu epochs "
              "(best %zu), %.1f min",
              bb_acc, approx, rationale, ck.trace.epoch_loss.size(), epochs, ck.trace.best_epoch + 1, minutes)};
}

Outcome beta_monotonicity() {
  SynthSpec spec;
  std::vector<double> high, low;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto task = gen_synth(spec, seed);
    const auto splits = split_80_10_10(task.data);
    auto cfg = synth_config(spec);
    cfg.seed = seed;
    cfg.beta = 1.0;
    high.push_back(train_vibi(splits.train, *task.blackbox, cfg).trace.epoch_kl.back());
    cfg.beta = 0.001;
    low.push_back(train_vibi(splits.train, *task.blackbox, cfg).trace.epoch_kl.back());
  }
  const double h = median3(high), l = median3(low);
  return {h <= l, fmt("median final-epoch KL: beta=1 %.4f, beta=0.001 %.4f", h, l)};
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_bytes(p.string());
  return {bytes.begin(), bytes.end()};
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return rc;
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  fs::remove_all(work);
  const std::string exe = "\"" + cli + "\"";
  const auto base = work / "data";
  if (run(exe + " gen-synth --seed 0 --out \"" + base.string() + "\"") != 0) return {false, "gen-synth failed"};
  for (const char* name : {"a", "b"}) {
    const auto dir = work / name;
    if (run(exe + " train-vibi --config \"" + (base / "run.json").string() + "\" --out \"" + dir.string() + "\"") != 0 ||
        run(exe + " eval-fidelity --checkpoint \"" + (dir / "checkpoint.vibi").string() + "\"") != 0) {
      return {false, std::string("run ") + name + " failed"};
    }
  }
  const auto ca = slurp(work / "a" / "checkpoint.vibi"), cb = slurp(work / "b" / "checkpoint.vibi");
  const auto fa = slurp(work / "a" / "fidelity-test.json"), fb = slurp(work / "b" / "fidelity-test.json");
  return {ca == cb && fa == fb && !ca.empty(),
          fmt("checkpoints %zu bytes %s, fidelity reports %s", ca.size(), ca == cb ? "identical" : "differ",
              fa == fb ? "identical" : "differ")};
}

Outcome round_trips(const Checkpoint& ck) {
  std::vector<std::string> problems;
  const auto bytes = ck.bytes();
  if (Checkpoint::from_container(decode(bytes)).bytes() != bytes) problems.push_back("checkpoint bytes changed");

  const std::string fx = VIBI_FIXTURE_DIR;
  const auto d = load_idx_dataset(fx + "/images-2x2x2.idx", fx + "/labels-2.idx");
  const std::vector<int> pixels{0, 51, 102, 255, 1, 2, 128, 254};
  bool idx_ok = d.x.shape() == Shape{2, 1, 2, 2} && d.labels == std::vector<std::size_t>{7, 3};
  for (std::size_t i = 0; idx_ok && i < pixels.size(); ++i) idx_ok = d.x[i] == static_cast<float>(pixels[i]) / 255.0f;
  if (!idx_ok) problems.push_back("IDX fixture mismatch");
  bool idx_errors = false;
  try {
    load_idx(fx + "/truncated-payload.idx");
  } catch (const DataError&) {
    idx_errors = true;
  }
  if (!idx_errors) problems.push_back("truncated IDX accepted");

  if (testing::fixed_selection_heatmap() != testing::read_fixture("heatmap-fixed-selection.pgm")) {
    problems.push_back("fixed-selection PGM differs from golden");
  }
  if (testing::seeded_checkpoint_heatmap() != testing::read_fixture("heatmap-seeded-checkpoint.pgm")) {
    problems.push_back("seeded-checkpoint PGM differs from golden");
  }
  std::string detail = "checkpoint " + std::to_string(bytes.size()) + " bytes, IDX fixtures, 2 PGM goldens";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string mnist_dir = VIBI_DEFAULT_MNIST_DIR;
  if (const char* env = std::getenv("VIBI_MNIST_DIR")) mnist_dir = env;
  std::size_t mnist_epochs = 10;
  std::string work = VIBI_WORK_DIR;
  app.add_option("--criteria", only, "Criteria to run (default 1-9)");
  app.add_option("--mnist-dir", mnist_dir, "Directory with the MNIST IDX files");
  app.add_option("--mnist-epochs", mnist_epochs, "Epoch budget for the MNIST run");
  app.add_option("--work-dir", work, "Scratch directory for end-to-end runs");
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  std::vector<SynthRun> synth_runs;
  bool all = true;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& f) {
    if (std::find(only.begin(), only.end(), id) == only.end()) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "Gumbel-max exactness", gumbel_max);
  report(3, "KL identity", kl_identity);
  report(4, "L2X reduction", l2x_reduction);
  report(5, "synthetic planted-chunk task", [&] { return synthetic_task(synth_runs); });
  report(6, "MNIST reproduction", [&] { return mnist(mnist_dir, mnist_epochs); });
  report(7, "beta monotonicity", beta_monotonicity);
  report(8, "determinism", [&] { return determinism(VIBI_CLI, fs::path(work) / "determinism"); });
  report(9, "format round-trips", [&] {
    if (synth_runs.empty()) synth_runs.push_back(synth_run(0));
    return round_trips(synth_runs.front().ck);
  });
  return all ? 0 : 1;
}
