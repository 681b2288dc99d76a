#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "meftlab/config.hpp"
#include "meftlab/param_store.hpp"

namespace meftlab {

/// Per-layer encoder activations. per_layer[i-1] is the output of layer i.
struct LayerTaps {
  Tensor embeddings;
  std::vector<Tensor> per_layer;

  [[nodiscard]] const Tensor& final() const { return per_layer.back(); }
  [[nodiscard]] const Tensor& layer(int i) const { return per_layer.at(static_cast<std::size_t>(i - 1)); }
};

/// Optional per-layer customization used by the PEFT methods.
struct LayerHooks {
  // Replaces the q or v projection (which = 'q' / 'v') of `layer`.
  std::function<Tensor(Engine&, int layer, char which, const Tensor& x, const Tensor& w,
                       const Tensor& b)>
      projection;
  // Applied to the output of sublayer 0 (attention) or 1 (FFN) before the residual add.
  std::function<Tensor(Engine&, int layer, int sublayer, const Tensor& out)> sublayer_out;
};

std::string layer_prefix(int layer);  // "layer3."

/// Conv stem, encoder layers and final LayerNorm. Declared, not materialized.
void declare_backbone(ParamStore& params, const ModelConfig& cfg);
/// Projection -> mean over time -> classifier, all owned by Head.
void declare_head(ParamStore& params, const ModelConfig& cfg, int d_feat);
/// Backbone and a d_model-wide head, materialized from `seed`.
ParamStore init_backbone(const ModelConfig& cfg, std::uint64_t seed);

/// Frozen front-end: two kernel-3 convolutions with GELU, then position embedding.
Tensor frontend(Engine& engine, ParamStore& params, const ModelConfig& cfg, const Tensor& x);
/// Pre-norm block: y = x + MHSA(LN(x)); z = y + FFN(LN(y)). `layer` is 1-based.
Tensor encoder_layer(Engine& engine, ParamStore& params, const ModelConfig& cfg, int layer,
                     const Tensor& x, const LayerHooks* hooks = nullptr);
Tensor final_norm(Engine& engine, ParamStore& params, const ModelConfig& cfg, const Tensor& x);

/// Runs the front-end and layers 1..upto (default all). With retain=false the
/// whole pass is detached and every tap is a constant.
LayerTaps encode(Engine& engine, ParamStore& params, const ModelConfig& cfg, const Tensor& x,
                 bool retain, const LayerHooks* hooks = nullptr, int upto = -1);

/// logits (1 x K) = FC(mean_t(Proj(features))).
Tensor classify_head(Engine& engine, ParamStore& params, const Tensor& features);

/// Sets frozen flags for `method`; the head is always trainable.
void freeze_policy(ParamStore& params, const MethodSpec& method);

}  // namespace meftlab
