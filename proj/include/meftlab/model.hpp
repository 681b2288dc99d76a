#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meftlab/backbone.hpp"
#include "meftlab/peft.hpp"

namespace meftlab {

/// Frozen-backbone outputs a MEFT method consumes; computed without retention
/// and reusable across epochs because the backbone never changes.
struct SideInput {
  LayerTaps taps;                    // LST: all; SHERL: layers 1..N-1; UniPT: empty
  std::vector<Tensor> interactions;  // UniPT only
  std::vector<double> rho;           // SHERL only
};

/// Backbone + method structures + head, with the method's freeze policy applied.
class FineTuneModel {
 public:
  /// Declares every parameter; storage is allocated only when `seed` is given.
  FineTuneModel(ModelConfig cfg, MethodSpec method, std::optional<std::uint64_t> seed = std::nullopt);
  // the PEFT hooks capture `this`
  FineTuneModel(const FineTuneModel&) = delete;
  FineTuneModel& operator=(const FineTuneModel&) = delete;

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] const MethodSpec& method() const { return method_; }
  [[nodiscard]] ParamStore& params() { return params_; }
  [[nodiscard]] const ParamStore& params() const { return params_; }
  [[nodiscard]] int head_width() const;

  /// Names of the AdaLoRA triplets ("layer1.ada_q."), empty for other methods.
  [[nodiscard]] const std::vector<std::string>& adalora_prefixes() const { return adalora_prefixes_; }

  /// Detached backbone pass for MEFT methods.
  SideInput prepare(Engine& engine, const Tensor& x);
  /// Logits (1 x K) from a prepared side input (MEFT methods only).
  Tensor logits_from(Engine& engine, const SideInput& side);
  /// Logits (1 x K) for an n x d_input input, any method.
  Tensor logits(Engine& engine, const Tensor& x);

 private:
  LayerHooks hooks_;
  ModelConfig cfg_;
  MethodSpec method_;
  ParamStore params_;
  std::vector<std::string> adalora_prefixes_;
};

}  // namespace meftlab
