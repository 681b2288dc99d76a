#pragma once

#include <vector>

#include "meftlab/backbone.hpp"

namespace meftlab {

/// mu * h_f + (1 - mu) * h_g with mu = sigmoid(alpha / T); alpha is 1 x 1.
Tensor gate_combine(Engine& engine, const Tensor& alpha, double temperature, const Tensor& h_f,
                    const Tensor& h_g);

// LST: lst.down{0..N} (d_model -> d_side), lst.block{1..N} bottleneck
// adapters at width d_side, lst.gate{1..N} scalars starting at zero.
void declare_lst(ParamStore& params, const ModelConfig& cfg, const MethodSpec& method);
/// g_0 = down_0(emb); g_i = block_i(gate(alpha_i, down_i(tap_i), g_{i-1})); returns g_N.
Tensor lst_forward(Engine& engine, ParamStore& params, const ModelConfig& cfg,
                   const MethodSpec& method, const LayerTaps& taps);

/// A = relu(F_N F_i^T), row-wise L1 normalized (zero rows stay zero); returns (A + I) F_i.
Tensor unipt_interact(Engine& engine, const Tensor& f_i, const Tensor& f_n);

// UniPT: unipt.proj{1..N} (d_model -> d_side) and unipt.conf (d_side -> 1).
void declare_unipt(ParamStore& params, const ModelConfig& cfg, const MethodSpec& method);
/// Interactions of every layer with the last one (parameter free, cacheable).
std::vector<Tensor> unipt_interactions(Engine& engine, const LayerTaps& taps);
/// E_i = relu(proj_i(interaction_i)); c_i = mean_t(conf(E_i)); w = softmax(c);
/// returns sum_i w_i E_i.
Tensor unipt_aggregate(Engine& engine, ParamStore& params, const std::vector<Tensor>& interactions);
Tensor unipt_aggregate(Engine& engine, ParamStore& params, const LayerTaps& taps);

/// rho_i = mean over j != i of max(0, cos(pool(tap_i), pool(tap_j))) for the
/// first N-2 layers. Throws ConfigError when N < 3.
std::vector<double> sherl_redundancy(Engine& engine, const LayerTaps& taps, int n_layers);
/// Same rule applied to already pooled vectors.
std::vector<double> sherl_redundancy_pooled(const std::vector<std::vector<double>>& pooled);

// SHERL: sherl.proj{1..N-2} (d_model -> d_side), sherl.q.w (d_model -> d_side),
// sherl.out.w (d_side -> d_model), sherl.gate scalar.
void declare_sherl(ParamStore& params, const ModelConfig& cfg, const MethodSpec& method);
/// Guided cross-attention over the shallow layers, gate-added to tap N-1 and
/// routed through the frozen layer N (recorded). Needs taps 1..N-1.
Tensor sherl_forward(Engine& engine, ParamStore& params, const ModelConfig& cfg,
                     const MethodSpec& method, const LayerTaps& taps, const std::vector<double>& rho);

}  // namespace meftlab
