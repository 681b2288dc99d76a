#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "meftlab/cost_model.hpp"
#include "meftlab/gradcheck_suite.hpp"
#include "meftlab/report.hpp"
#include "meftlab/run_config.hpp"
#include "meftlab/train.hpp"

namespace fs = std::filesystem;
using namespace meftlab;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kConfig = 2;

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool deterministic{false};
  std::string precision;
};

void apply(const Overrides& o, RunConfig& cfg) {
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.deterministic) cfg.train.deterministic = true;
  if (o.precision == "f32") cfg.train.precision = Precision::F32;
  if (o.precision == "f64") cfg.train.precision = Precision::F64;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int cmd_run(const Overrides& o) {
  RunConfig cfg = load_run_config(o.config, false);
  apply(o, cfg);
  const Split data = build_data(cfg);
  const TrainReport r = train(cfg.model, cfg.methods.front(), data, cfg.train);
  fs::create_directories(cfg.output_dir);
  const std::string row = csv_row(r, cfg.train.deterministic);
  write_file(fs::path(cfg.output_dir) / "report.csv", std::string(kCsvHeader) + "\n" + row + "\n");
  write_file(fs::path(cfg.output_dir) / "report.json", report_json(r, cfg.train.deterministic) + "\n");
  std::cout << kCsvHeader << "\n" << row << "\n";
  return kOk;
}

int cmd_sweep(const Overrides& o, int jobs) {
  RunConfig cfg = load_run_config(o.config, true);
  apply(o, cfg);
  const Split data = build_data(cfg);
  const std::size_t count = cfg.methods.size();
  std::vector<std::string> rows(count);
  std::vector<bool> ok(count, false);
  std::atomic<std::size_t> next{0};
  std::mutex log;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      const MethodSpec& m = cfg.methods[i];
      try {
        const TrainReport r = train(cfg.model, m, data, cfg.train);
        rows[i] = csv_row(r, cfg.train.deterministic) + ",ok";
        ok[i] = true;
      } catch (const std::exception& e) {
        rows[i] = m.label() + ",,,,,,,,error: " + sanitize(e.what());
      }
      std::lock_guard<std::mutex> lock(log);
      std::cerr << "[" << (ok[i] ? "ok" : "failed") << "] " << m.label() << "\n";
    }
  };
  std::vector<std::thread> pool;
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::string csv = std::string(kCsvHeader) + ",status\n";
  for (const auto& r : rows) csv += r + "\n";
  fs::create_directories(cfg.output_dir);
  write_file(fs::path(cfg.output_dir) / "sweep.csv", csv);
  std::cout << csv;
  if (std::none_of(ok.begin(), ok.end(), [](bool b) { return b; })) {
    std::cerr << "error: all runs failed\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out) {
  std::vector<CsvRow> rows;
  for (const auto& f : files) {
    auto part = parse_csv(read_file(f), f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string md = render_report(rows);
  if (!out.empty()) write_file(out, md);
  std::cout << md;
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool pass = true;
  for (const auto& c : run_gradcheck_suite(seed)) {
    std::printf("%-4s %-22s max_rel_err=%.3e tol=%.0e\n", c.report.pass ? "PASS" : "FAIL", c.name.c_str(),
                c.report.max_rel_err, c.report.tol);
    const auto skipped = std::count_if(c.report.entries.begin(), c.report.entries.end(),
                                       [](const GradcheckEntry& e) { return e.skipped; });
    if (skipped > 0) std::printf("     %ld frozen entries: no gradient, skipped\n", static_cast<long>(skipped));
    pass = pass && c.report.pass;
  }
  return pass ? kOk : kRuntime;
}

std::vector<MethodSpec> default_methods() {
  return {MethodSpec::vanilla(), MethodSpec::head(),    MethodSpec::bitfit(),   MethodSpec::adapter(8),
          MethodSpec::lora(8),   MethodSpec::adalora(8), MethodSpec::lst(2),    MethodSpec::lst(4),
          MethodSpec::lst(8),    MethodSpec::unipt(2),  MethodSpec::unipt(8),   MethodSpec::sherl(2),
          MethodSpec::sherl(8)};
}

int cmd_memcheck(const Overrides& o) {
  ModelConfig model = ModelConfig::toy();
  std::vector<MethodSpec> methods = default_methods();
  Precision precision = Precision::F32;
  std::uint64_t seed = 0;
  if (!o.config.empty()) {
    RunConfig cfg = load_run_config(o.config, true);
    apply(o, cfg);
    model = cfg.model;
    methods = cfg.methods;
    precision = cfg.train.precision;
    seed = cfg.train.seed;
  } else {
    if (o.seed) seed = *o.seed;
    if (o.precision == "f64") precision = Precision::F64;
  }
  const std::size_t elem = precision == Precision::F32 ? 4 : 8;
  bool all = true;
  std::printf("%-14s %14s %14s %16s %16s %9s  %-12s %s\n", "method", "model_bytes", "measured_bytes",
              "model_flops", "measured_flops", "bb_nodes", "bb_layers", "status");
  for (const auto& m : methods) {
    const CostReport c = cost_model(model, m, 1, elem);
    const StepMeasure s = measure_step(model, m, seed, precision);
    const bool match = c.retained_activation_bytes == s.peak_retained_bytes && c.backward_flops == s.backward_flops;
    all = all && match;
    std::string layers;
    for (int l : s.backbone_layers) layers += (layers.empty() ? "" : ",") + std::to_string(l);
    std::printf("%-14s %14zu %14zu %16.0f %16.0f %9zu  %-12s %s\n", m.label().c_str(), c.retained_activation_bytes,
                s.peak_retained_bytes, c.backward_flops, s.backward_flops, s.backbone_nodes,
                layers.empty() ? "-" : layers.c_str(), match ? "match" : "MISMATCH");
  }
  return all ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meftlab: parameter- and memory-efficient fine-tuning experiments"};
  app.require_subcommand(1);
  Overrides o;
  int jobs = 1;
  std::vector<std::string> csv_files;
  std::string report_out;

  auto common = [&o](CLI::App* sub, bool need_config) {
    auto* c = sub->add_option("--config", o.config, "JSON run config");
    if (need_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "training seed");
    sub->add_flag("--deterministic", o.deterministic, "serial kernels, step_ms written as 0");
    sub->add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  };
  auto* run = app.add_subcommand("run", "train one method and write report.csv / report.json");
  common(run, true);
  auto* sweep = app.add_subcommand("sweep", "train every method in the config's list");
  common(sweep, true);
  sweep->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "markdown table and ordering verdicts from CSVs");
  report->add_option("csv", csv_files, "report or sweep CSV files")->required();
  report->add_option("--out", report_out, "also write the markdown here");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite at f64");
  std::uint64_t grad_seed = 0;
  grad->add_option("--seed", grad_seed, "operand seed");
  auto* mem = app.add_subcommand("memcheck", "cost model vs measured retention per method");
  common(mem, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o, jobs);
    if (*report) return cmd_report(csv_files, report_out);
    if (*grad) return cmd_gradcheck(grad_seed);
    if (*mem) return cmd_memcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
