#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "meftlab/cost_model.hpp"
#include "meftlab/gradcheck_suite.hpp"
#include "meftlab/meft.hpp"
#include "meftlab/model.hpp"
#include "meftlab/train.hpp"
#include "oracles.hpp"

using namespace meftlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass{true};
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor input_for(const ModelConfig& cfg, std::uint64_t seed) {
  const SyntheticTaskSpec task{cfg.n_classes, cfg.seq_len, cfg.d_input};
  return gen_synthetic(task, static_cast<std::size_t>(cfg.n_classes), seed).items[0].x;
}

// 1: trainable ratios at Whisper-small scale, closed form and live census.
Outcome ratios() {
  Outcome o;
  const ModelConfig big = ModelConfig::whisper_small();
  struct Want {
    MethodSpec m;
    double pct, tol;
  };
  const std::vector<Want> wants = {{MethodSpec::head(), 0.22, 0.05},    {MethodSpec::bitfit(), 0.33, 0.1},
                                   {MethodSpec::lora(64), 2.82, 0.3},   {MethodSpec::adapter(64), 2.88, 0.4},
                                   {MethodSpec::lst(8), 2.06, 0.3},     {MethodSpec::vanilla(), 96.48, 1.0}};
  std::string got;
  for (const auto& w : wants) {
    const double model_pct = cost_model(big, w.m, 1, 4).trainable_ratio_pct;
    const double census_pct = FineTuneModel(big, w.m).params().trainable_ratio_pct();
    got += (got.empty() ? "" : " ") + w.m.label() + "=" + fmt("%.3f", census_pct);
    o.require(model_pct == census_pct, w.m.label() + " cost model and census disagree");
    o.require(std::abs(census_pct - w.pct) <= w.tol,
              w.m.label() + " " + fmt("%.3f", census_pct) + " outside " + fmt("%.2f", w.pct) + " +- " + fmt("%.2f", w.tol));
  }
  if (o.pass) o.detail = got;
  return o;
}

// 2: which layers' backbone nodes a backward visits.
Outcome visits() {
  Outcome o;
  const ModelConfig cfg = ModelConfig::toy();
  std::set<int> all;
  for (int l = 1; l <= cfg.n_layers; ++l) all.insert(l);
  for (const auto& m : {MethodSpec::lst(2), MethodSpec::lst(8), MethodSpec::unipt(2), MethodSpec::unipt(8)}) {
    const auto s = measure_step(cfg, m, 1, Precision::F32);
    o.require(s.backbone_nodes == 0, m.label() + " visits " + std::to_string(s.backbone_nodes) + " backbone nodes");
  }
  for (const auto& m : {MethodSpec::sherl(2), MethodSpec::sherl(8)}) {
    const auto s = measure_step(cfg, m, 1, Precision::F32);
    o.require(s.backbone_nodes > 0 && s.backbone_layers == std::set<int>{cfg.n_layers},
              m.label() + " visits layers other than N");
  }
  for (const auto& m : {MethodSpec::vanilla(), MethodSpec::lora(8), MethodSpec::adapter(8), MethodSpec::bitfit()}) {
    const auto s = measure_step(cfg, m, 1, Precision::F32);
    bool every = true;
    for (int l : all) every = every && s.backbone_layers.count(l) != 0;
    o.require(every, m.label() + " misses a layer");
  }
  if (o.pass) o.detail = "lst/unipt 0 nodes, sherl layer {" + std::to_string(cfg.n_layers) + "} only, peft/vanilla layers 1.." +
                         std::to_string(cfg.n_layers);
  return o;
}

// 3: measured retention orderings plus the analytical footprint at 88M.
Outcome memory() {
  Outcome o;
  const ModelConfig cfg = ModelConfig::toy();
  auto peak = [&](const MethodSpec& m) { return measure_step(cfg, m, 1, Precision::F32).peak_retained_bytes; };
  const auto lst8 = peak(MethodSpec::lst(8)), lst4 = peak(MethodSpec::lst(4)), lst2 = peak(MethodSpec::lst(2));
  const auto sherl8 = peak(MethodSpec::sherl(8)), vanilla = peak(MethodSpec::vanilla());
  o.require(lst8 < lst4 && lst4 < lst2, "lst not decreasing in rf");
  o.require(lst8 < sherl8 && sherl8 < vanilla, "lst8 < sherl8 < vanilla violated");
  std::size_t meft_max = 0, peft_min = SIZE_MAX, peft_max = 0;
  for (const auto& m : {MethodSpec::lst(8), MethodSpec::unipt(8), MethodSpec::sherl(8)}) meft_max = std::max(meft_max, peak(m));
  for (const auto& m : {MethodSpec::adapter(8), MethodSpec::lora(8), MethodSpec::adalora(8), MethodSpec::bitfit()}) {
    const auto p = peak(m);
    peft_min = std::min(peft_min, p);
    peft_max = std::max(peft_max, p);
  }
  o.require(meft_max < peft_min, "a MEFT(rf8) variant retains as much as a PEFT variant");
  o.require(peft_max < vanilla, "a PEFT variant retains as much as vanilla");

  const ModelConfig big = ModelConfig::whisper_small();
  auto foot = [&](const MethodSpec& m) { return static_cast<double>(cost_model(big, m, 128, 2).total_footprint); };
  double fm_max = 0, fp_min = 1e300, fp_max = 0;
  for (int rf : {2, 4, 8})
    for (const auto& m : {MethodSpec::lst(rf), MethodSpec::unipt(rf), MethodSpec::sherl(rf)}) fm_max = std::max(fm_max, foot(m));
  for (const auto& m : {MethodSpec::adapter(64), MethodSpec::lora(64), MethodSpec::adalora(64), MethodSpec::bitfit()}) {
    fp_min = std::min(fp_min, foot(m));
    fp_max = std::max(fp_max, foot(m));
  }
  const double fv = foot(MethodSpec::vanilla());
  o.require(fm_max < fp_min && fp_max < fv, "88M footprint group ordering MEFT < PEFT < vanilla violated");
  const double reduction = 1.0 - foot(MethodSpec::lst(8)) / fv;
  o.require(reduction >= 0.60, "lst8 footprint reduction " + fmt("%.3f", reduction) + " < 0.60");
  if (o.pass) {
    o.detail = "toy peaks lst8/4/2=" + std::to_string(lst8) + "/" + std::to_string(lst4) + "/" + std::to_string(lst2) +
               " sherl8=" + std::to_string(sherl8) + " vanilla=" + std::to_string(vanilla) +
               "; 88M lst8 reduction " + fmt("%.1f%%", 100.0 * reduction);
  }
  return o;
}

// 4: backward work of LST(8) relative to vanilla.
Outcome flops() {
  Outcome o;
  const ModelConfig cfg = ModelConfig::toy();
  const double ratio = measure_step(cfg, MethodSpec::lst(8), 1, Precision::F32).backward_flops /
                       measure_step(cfg, MethodSpec::vanilla(), 1, Precision::F32).backward_flops;
  o.require(ratio <= 0.5, "ratio " + fmt("%.4f", ratio));
  if (o.pass) o.detail = "lst8/vanilla backward flops " + fmt("%.4f", ratio) + " (<= 0.5)";
  return o;
}

// 5: finite-difference suite.
Outcome gradients() {
  Outcome o;
  double worst = 0.0;
  std::size_t n = 0;
  for (const auto& c : run_gradcheck_suite(0)) {
    ++n;
    worst = std::max(worst, c.report.max_rel_err);
    o.require(c.report.pass && c.report.tol <= 1e-5, c.name + " max_rel_err " + fmt("%.3e", c.report.max_rel_err));
  }
  if (o.pass) o.detail = std::to_string(n) + " cases, worst rel err " + fmt("%.2e", worst) + " (tol 1e-5)";
  return o;
}

// 6: fresh method structures leave the logits untouched.
Outcome init_identity() {
  Outcome o;
  const ModelConfig cfg = ModelConfig::toy();
  const Tensor x = input_for(cfg, 5);
  FineTuneModel ref(cfg, MethodSpec::head(), 21);
  Engine e;
  const Tensor want = ref.logits(e, x);
  for (const auto& m : {MethodSpec::lora(8), MethodSpec::adapter(8), MethodSpec::adalora(8)}) {
    FineTuneModel model(cfg, m, 21);
    for (const auto& p : model.adalora_prefixes()) *model.params().at(p + "lambda").value = Buffer(8, 0.0);
    Engine e2;
    const Tensor got = model.logits(e2, x);
    bool same = got.shape() == want.shape();
    for (std::size_t i = 0; same && i < got.size(); ++i) same = got.data()[i] == want.data()[i];
    o.require(same, m.label() + " logits differ");
  }
  const Tensor f({1, 3}, {1.0, -2.0, 0.75});
  const Tensor g({1, 3}, {3.0, 0.5, -0.25});
  const Tensor mixed = gate_combine(e, Tensor::scalar(0.0), 0.1, f, g);
  for (std::size_t i = 0; i < 3; ++i)
    o.require(mixed.data()[i] == (f.data()[i] + g.data()[i]) / 2.0, "gate at alpha 0 is not the mean");
  if (o.pass) o.detail = "lora/adapter/adalora logits bit-identical to frozen backbone + head; gate(0) exact mean";
  return o;
}

// 7: learning separation on the synthetic task.
Outcome separation() {
  Outcome o;
  const ModelConfig cfg = ModelConfig::toy();
  const Split data = split_stratified(gen_synthetic(SyntheticTaskSpec{}, 600, 1));
  const double linear = oracle::linear_oracle_pct(data);
  TrainSpec spec;
  spec.deterministic = true;
  const double head_bound = 75.0;
  std::string got = "linear oracle " + fmt("%.1f", linear);
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& m : {MethodSpec::head(), MethodSpec::vanilla(), MethodSpec::lora(8), MethodSpec::adapter(8),
                        MethodSpec::lst(2), MethodSpec::unipt(2), MethodSpec::sherl(2)}) {
    const double acc = train(cfg, m, data, spec).accuracy_pct;
    got += ", " + m.label() + " " + fmt("%.1f", acc);
    if (m.kind == MethodKind::Head) {
      o.require(acc <= head_bound, "head " + fmt("%.1f", acc) + " > " + fmt("%.0f", head_bound));
    } else {
      o.require(acc >= 90.0, m.label() + " " + fmt("%.1f", acc) + " < 90");
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(secs < 900.0, "took " + fmt("%.0f", secs) + " s");
  o.detail = got + " (" + fmt("%.0f", secs) + " s)" + (o.pass ? "" : "; " + o.detail);
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MEFTLAB_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 8: two deterministic CLI runs give identical CSV rows.
Outcome determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "meftlab_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({
  "model": {"preset": "toy"},
  "method": {"name": "lst", "rf": 4},
  "train": {"lr_grid": [0.001], "epochs": 2},
  "task": {"count": 60, "seed": 2}
})";
  const std::string base = "run --deterministic --config " + (dir / "config.json").string() + " --out ";
  o.require(run_cli(base + (dir / "a").string()) == 0, "first run failed");
  o.require(run_cli(base + (dir / "b").string()) == 0, "second run failed");
  const std::string a = slurp(dir / "a" / "report.csv");
  const std::string b = slurp(dir / "b" / "report.csv");
  o.require(!a.empty() && a == b, "report.csv differs");
  if (o.pass) o.detail = "report.csv byte-identical (" + std::to_string(a.size()) + " bytes)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> expected_fail, only;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::string(argv[i]) == "--expect-fail") expected_fail.insert(std::atoi(argv[i + 1]));
    if (std::string(argv[i]) == "--only") only.insert(std::atoi(argv[i + 1]));
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"trainable-ratio reproduction", ratios},  {"no backbone backprop", visits},
      {"memory ordering", memory},               {"backward work reduction", flops},
      {"gradient correctness", gradients},       {"init identity", init_identity},
      {"learning separation", separation},       {"determinism", determinism}};
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && only.count(id) == 0) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && expected_fail.count(id) == 0) ++unexpected;
    if (o.pass && expected_fail.count(id) != 0) std::printf("note: criterion %d was expected to fail but passed\n", id);
  }
  return unexpected == 0 ? 0 : 1;
}
