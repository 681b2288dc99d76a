#pragma once

#include <optional>
#include <string>
#include <vector>

#include "meftlab/config.hpp"
#include "meftlab/data.hpp"
#include "meftlab/train.hpp"

namespace meftlab {

/// Experiment description read from JSON. Exactly one data source: a
/// synthetic task ("task") or an MFB1 feature file with labels ("features").
/// Schema (all keys optional unless noted):
///
///   model:    preset ("toy" | "whisper_small"), n_layers, d_model, n_heads,
///             d_ff, seq_len, d_input, n_classes, proj_dim, init_std, frontend_std
///   method:   {name (required), dim, r, init_r, rf, h_side}      (run)
///   methods:  [method, ...]                                      (sweep)
///   train:    lr_grid, batch_size, epochs, seed, deterministic, precision ("f32" | "f64")
///   task:     count, seed, noise_std, nonlinear, signatures [[a, b], ...]
///   features: path (required), labels (required)
///   output_dir
struct RunConfig {
  ModelConfig model;
  std::vector<MethodSpec> methods;
  TrainSpec train;
  std::optional<SyntheticTaskSpec> task;
  std::size_t task_count{600};
  std::uint64_t task_seed{1};
  std::string feature_path;
  std::string label_path;
  std::string output_dir{"out"};
};

/// Throws ConfigError naming the offending key.
RunConfig parse_run_config(const std::string& json_text, bool sweep);
RunConfig load_run_config(const std::string& path, bool sweep);
MethodSpec parse_method(const std::string& json_text);

/// Generates or loads the data and splits it 80/20 per class.
Split build_data(const RunConfig& cfg);

}  // namespace meftlab
