#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "meftlab/config.hpp"
#include "meftlab/data.hpp"
#include "meftlab/engine.hpp"

namespace meftlab {

struct TrainSpec {
  std::vector<double> lr_grid{1e-3, 5e-4, 1e-4};
  std::size_t batch_size{16};
  int epochs{10};
  std::uint64_t seed{0};
  bool deterministic{false};
  Precision precision{Precision::F32};

  void validate() const;
};

struct LrResult {
  double lr{0.0};
  double accuracy_pct{0.0};
  double final_loss{0.0};
};

struct TrainReport {
  std::string method;
  double trainable_ratio_pct{0.0};
  std::size_t trainable_params{0};
  std::size_t total_params{0};
  std::size_t peak_retained_bytes{0};  // per training sample
  std::size_t est_footprint_bytes{0};  // params + grads + optimizer + peak x batch
  double backward_flops{0.0};          // per training sample
  double step_ms{0.0};                 // mean wall time per optimizer step
  double accuracy_pct{0.0};            // best eval accuracy over epochs and lr grid
  double lr{0.0};
  std::size_t backbone_nodes_visited{0};  // per backward, max over the run
  std::set<int> backbone_layers_visited;  // union over the run
  std::vector<LrResult> grid;
};

class FineTuneModel;
struct SideInput;

/// What one forward/backward of a single training sample cost.
struct StepMeasure {
  double loss{0.0};
  std::size_t peak_retained_bytes{0};
  double backward_flops{0.0};
  std::size_t backbone_nodes{0};
  std::size_t side_nodes{0};
  std::size_t head_nodes{0};
  std::set<int> backbone_layers;
};

/// Forward, cross-entropy scaled by `loss_scale`, backward; gradients are
/// accumulated into the model's store. `side` is required for MEFT methods.
StepMeasure train_sample(Engine& engine, FineTuneModel& model, const Sample& sample,
                         const SideInput* side, double loss_scale);

/// One training sample's cost for a freshly initialized model, on a random
/// input (label 0). Used by memcheck and the acceptance checks.
StepMeasure measure_step(const ModelConfig& cfg, const MethodSpec& method, std::uint64_t seed,
                         Precision precision);

/// Trains `method` once per learning rate from the same initialization and
/// keeps the best eval accuracy (ties go to the smaller lr). Throws
/// std::runtime_error on a non-finite loss, naming method and lr.
TrainReport train(const ModelConfig& cfg, const MethodSpec& method, const Split& data,
                  const TrainSpec& spec);

}  // namespace meftlab
