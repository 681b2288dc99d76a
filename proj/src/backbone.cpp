#include "meftlab/backbone.hpp"

#include <cmath>

#include "meftlab/ops.hpp"

namespace meftlab {
namespace {

void declare_linear(ParamStore& p, const std::string& name, int d_in, int d_out, Owner owner,
                    InitSpec w_init, int layer, bool frontend = false) {
  const auto in = static_cast<std::size_t>(d_in);
  const auto out = static_cast<std::size_t>(d_out);
  p.declare({name + ".w", {in, out}, Role::Weight, owner, w_init, layer, frontend});
  p.declare({name + ".b", {1, out}, Role::Bias, owner, InitSpec::zeros(), layer, frontend});
}

void declare_norm(ParamStore& p, const std::string& name, int d, Owner owner, int layer) {
  const auto n = static_cast<std::size_t>(d);
  p.declare({name + ".g", {1, n}, Role::Gain, owner, InitSpec::ones(), layer});
  p.declare({name + ".b", {1, n}, Role::Bias, owner, InitSpec::zeros(), layer});
}

Tensor linear(Engine& e, ParamStore& p, const std::string& name, const Tensor& x) {
  const Tensor w = p.use(e, name + ".w");
  const Tensor b = p.use(e, name + ".b");
  return ops::linear(e, x, w, &b);
}

Tensor norm(Engine& e, ParamStore& p, const std::string& name, const Tensor& x, double eps) {
  return ops::layernorm(e, x, p.use(e, name + ".g"), p.use(e, name + ".b"), eps);
}

// Kernel-3, stride-1, zero-padded convolution as a linear map over [x(t-1), x(t), x(t+1)].
Tensor conv3(Engine& e, ParamStore& p, const std::string& name, const Tensor& x) {
  const Tensor cols = ops::concat_cols(e, {ops::shift_rows(e, x, 1), x, ops::shift_rows(e, x, -1)});
  return linear(e, p, name, cols);
}

}  // namespace

std::string layer_prefix(int layer) { return "layer" + std::to_string(layer) + "."; }

void declare_backbone(ParamStore& params, const ModelConfig& cfg) {
  cfg.validate();
  const auto fe = InitSpec::normal(cfg.frontend_std);
  const auto w = InitSpec::normal(cfg.init_std);
  const int d = cfg.d_model;
  declare_linear(params, "frontend.conv1", 3 * cfg.d_input, d, Owner::Backbone, fe, 0, true);
  declare_linear(params, "frontend.conv2", 3 * d, d, Owner::Backbone, fe, 0, true);
  params.declare({"frontend.pos",
                  {static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(d)},
                  Role::Embedding, Owner::Backbone, fe, 0, true});
  for (int i = 1; i <= cfg.n_layers; ++i) {
    const std::string pre = layer_prefix(i);
    declare_norm(params, pre + "ln1", d, Owner::Backbone, i);
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"})
      declare_linear(params, pre + proj, d, d, Owner::Backbone, w, i);
    declare_norm(params, pre + "ln2", d, Owner::Backbone, i);
    declare_linear(params, pre + "fc1", d, cfg.d_ff, Owner::Backbone, w, i);
    declare_linear(params, pre + "fc2", cfg.d_ff, d, Owner::Backbone, w, i);
  }
  declare_norm(params, "final_ln", d, Owner::Backbone, cfg.n_layers);
}

void declare_head(ParamStore& params, const ModelConfig& cfg, int d_feat) {
  declare_linear(params, "head.proj", d_feat, cfg.proj_dim, Owner::Head, InitSpec::scaled(), -1);
  declare_linear(params, "head.fc", cfg.proj_dim, cfg.n_classes, Owner::Head, InitSpec::scaled(), -1);
}

ParamStore init_backbone(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore params;
  declare_backbone(params, cfg);
  declare_head(params, cfg, cfg.d_model);
  params.materialize(seed);
  return params;
}

Tensor frontend(Engine& engine, ParamStore& params, const ModelConfig& cfg, const Tensor& x) {
  if (x.shape() != Shape{static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.d_input)}) {
    throw ShapeError("encoder input must be " + std::to_string(cfg.seq_len) + "x" +
                     std::to_string(cfg.d_input) + ", got " + x.shape().str());
  }
  Engine::Tag tag(engine, Owner::Backbone, 0);
  Tensor h = ops::gelu(engine, conv3(engine, params, "frontend.conv1", x));
  h = ops::gelu(engine, conv3(engine, params, "frontend.conv2", h));
  return ops::embedding_add(engine, h, params.use(engine, "frontend.pos"));
}

Tensor encoder_layer(Engine& engine, ParamStore& params, const ModelConfig& cfg, int layer,
                     const Tensor& x, const LayerHooks* hooks) {
  Engine::Tag tag(engine, Owner::Backbone, layer);
  const std::string pre = layer_prefix(layer);
  const auto proj = [&](const char* name, char which, const Tensor& in) {
    const Tensor w = params.use(engine, pre + name + ".w");
    const Tensor b = params.use(engine, pre + name + ".b");
    if (hooks && hooks->projection && (which == 'q' || which == 'v')) {
      return hooks->projection(engine, layer, which, in, w, b);
    }
    return ops::linear(engine, in, w, &b);
  };
  const auto sub_out = [&](int sublayer, const Tensor& out) {
    if (hooks && hooks->sublayer_out) return hooks->sublayer_out(engine, layer, sublayer, out);
    return out;
  };

  const Tensor h = norm(engine, params, pre + "ln1", x, cfg.ln_eps);
  const Tensor q = proj("attn.q", 'q', h);
  const Tensor k = proj("attn.k", 'k', h);
  const Tensor v = proj("attn.v", 'v', h);
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  for (std::size_t hd = 0; hd < static_cast<std::size_t>(cfg.n_heads); ++hd) {
    const Tensor qh = ops::slice_cols(engine, q, hd * dh, (hd + 1) * dh);
    const Tensor kh = ops::slice_cols(engine, k, hd * dh, (hd + 1) * dh);
    const Tensor vh = ops::slice_cols(engine, v, hd * dh, (hd + 1) * dh);
    const Tensor scores = ops::scale(engine, ops::matmul(engine, qh, ops::transpose(engine, kh)), inv_sqrt);
    heads.push_back(ops::matmul(engine, ops::softmax_rows(engine, scores), vh));
  }
  const Tensor attn = linear(engine, params, pre + "attn.o", ops::concat_cols(engine, heads));
  const Tensor y = ops::add(engine, x, sub_out(0, attn));

  const Tensor h2 = norm(engine, params, pre + "ln2", y, cfg.ln_eps);
  const Tensor ff = linear(engine, params, pre + "fc2",
                           ops::gelu(engine, linear(engine, params, pre + "fc1", h2)));
  return ops::add(engine, y, sub_out(1, ff));
}

Tensor final_norm(Engine& engine, ParamStore& params, const ModelConfig& cfg, const Tensor& x) {
  Engine::Tag tag(engine, Owner::Backbone, cfg.n_layers);
  return norm(engine, params, "final_ln", x, cfg.ln_eps);
}

LayerTaps encode(Engine& engine, ParamStore& params, const ModelConfig& cfg, const Tensor& x,
                 bool retain, const LayerHooks* hooks, int upto) {
  if (upto < 0) upto = cfg.n_layers;
  if (upto > cfg.n_layers) throw std::out_of_range("encode: upto exceeds n_layers");
  const auto run = [&] {
    LayerTaps taps;
    taps.embeddings = frontend(engine, params, cfg, x);
    Tensor h = taps.embeddings;
    for (int i = 1; i <= upto; ++i) {
      h = encoder_layer(engine, params, cfg, i, h, hooks);
      taps.per_layer.push_back(h);
    }
    return taps;
  };
  if (retain) return run();
  return detached_scope(engine, run);
}

Tensor classify_head(Engine& engine, ParamStore& params, const Tensor& features) {
  const ParamEntry& proj = params.at("head.proj.w");
  if (features.cols() != proj.shape.rows) {
    throw ShapeError("classify_head: feature width " + std::to_string(features.cols()) +
                     " but head expects " + std::to_string(proj.shape.rows));
  }
  Engine::Tag tag(engine, Owner::Head, -1);
  const Tensor p = linear(engine, params, "head.proj", features);
  return linear(engine, params, "head.fc", ops::mean(engine, p, 0));
}

void freeze_policy(ParamStore& params, const MethodSpec& method) {
  switch (method.kind) {
    case MethodKind::Vanilla:
      params.freeze_all(false);
      params.set_frozen_if([](const ParamEntry& e) { return e.frontend; }, true);
      break;
    case MethodKind::Head: params.freeze_all(true); break;
    case MethodKind::BitFit:
      params.freeze_all(true);
      params.set_frozen_if([](const ParamEntry& e) { return e.role == Role::Bias; }, false);
      break;
    case MethodKind::Adapter:
    case MethodKind::Lora:
    case MethodKind::AdaLora:
    case MethodKind::Lst:
    case MethodKind::Unipt:
    case MethodKind::Sherl:
      params.freeze_all(true);
      params.set_frozen_if([](const ParamEntry& e) { return e.method; }, false);
      break;
  }
  params.set_frozen_if([](const ParamEntry& e) { return e.owner == Owner::Head; }, false);
}

}  // namespace meftlab
