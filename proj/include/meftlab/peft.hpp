#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meftlab/param_store.hpp"

namespace meftlab {

// Bottleneck adapter: prefix.ln.{g,b}, prefix.down.{w,b}, prefix.up.{w,b}.
// The up projection starts at zero so a fresh adapter is the identity.
void declare_adapter(ParamStore& params, const std::string& prefix, int d, int dim, Owner owner,
                     int layer);
/// x + up(relu(down(ln(x)))).
Tensor adapter_forward(Engine& engine, ParamStore& params, const std::string& prefix,
                       const Tensor& x, double eps = 1e-5);

// LoRA pair on a d_in -> d_out projection. Stored input-major like every
// weight here: prefix.A is d_in x r (scaled normal), prefix.B is r x d_out (zero).
void declare_lora(ParamStore& params, const std::string& prefix, int d_in, int d_out, int r,
                  int layer);
/// x W + b + scaling * (x A) B. Throws ConfigError for rank < 1.
Tensor lora_forward(Engine& engine, const Tensor& x, const Tensor& w, const Tensor& b,
                    const Tensor& a, const Tensor& bm, double scaling);

// AdaLoRA-lite triplet: prefix.P (d_in x r), prefix.lambda (1 x r, zero),
// prefix.Q (r x d_out). Delta W = P diag(lambda) Q.
void declare_adalora(ParamStore& params, const std::string& prefix, int d_in, int d_out, int r,
                     int layer);
Tensor adalora_forward(Engine& engine, const Tensor& x, const Tensor& w, const Tensor& b,
                       const Tensor& p, const Tensor& lambda, const Tensor& q, double scaling);

/// Rank budget and importance masking shared by all AdaLoRA matrices.
class AdaLoraController {
 public:
  static constexpr double kBeta = 0.85;
  static constexpr double kOrthoWeight = 0.1;

  AdaLoraController(std::vector<std::string> prefixes, int init_r, std::size_t total_steps,
                    std::size_t mask_interval = 50);

  /// Per-matrix target rank after `step` optimizer steps: cubic decay from
  /// init_r to init_r/2 over the first 60% of training, then constant.
  static int schedule(int init_r, std::size_t step, std::size_t total_steps);
  [[nodiscard]] std::size_t budget(std::size_t step) const;

  /// importance <- beta * importance + (1 - beta) * |lambda * dL/dlambda|.
  void update_importance(const ParamStore& params);
  /// Re-selects the global top-k every mask_interval steps; in between only
  /// drops the least important active entries until the budget holds.
  /// Masked lambda values are zeroed in the store.
  void apply_mask(ParamStore& params, std::size_t step);
  /// Re-zeroes masked lambda values (after an optimizer update).
  void enforce(ParamStore& params) const;

  /// kOrthoWeight * sum over matrices of |P^T P - I|_F^2 + |Q Q^T - I|_F^2.
  Tensor orthogonality_penalty(Engine& engine, ParamStore& params) const;

  [[nodiscard]] std::size_t active() const;
  [[nodiscard]] const std::vector<double>& importance() const { return importance_; }
  [[nodiscard]] const std::vector<bool>& mask() const { return active_; }
  void set_importance(std::vector<double> importance) { importance_ = std::move(importance); }

 private:
  std::vector<std::string> prefixes_;
  int init_r_;
  std::size_t total_steps_;
  std::size_t mask_interval_;
  std::vector<double> importance_;  // flattened: matrix-major, then rank index
  std::vector<bool> active_;
};

/// Head plus every bias (role Bias) trainable, everything else frozen.
void bitfit_select(ParamStore& params);

}  // namespace meftlab
