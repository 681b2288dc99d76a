#include "meftlab/model.hpp"

#include "meftlab/meft.hpp"

namespace meftlab {

FineTuneModel::FineTuneModel(ModelConfig cfg, MethodSpec method, std::optional<std::uint64_t> seed)
    : cfg_(cfg), method_(method) {
  cfg_.validate();
  method_.validate(cfg_);
  declare_backbone(params_, cfg_);
  const int d = cfg_.d_model;
  switch (method_.kind) {
    case MethodKind::Adapter:
      for (int i = 1; i <= cfg_.n_layers; ++i) {
        declare_adapter(params_, layer_prefix(i) + "adapter1.", d, method_.dim, Owner::Side, i);
        declare_adapter(params_, layer_prefix(i) + "adapter2.", d, method_.dim, Owner::Side, i);
      }
      hooks_.sublayer_out = [this](Engine& e, int layer, int sublayer, const Tensor& out) {
        const std::string name = layer_prefix(layer) + (sublayer == 0 ? "adapter1." : "adapter2.");
        return adapter_forward(e, params_, name, out, cfg_.ln_eps);
      };
      break;
    case MethodKind::Lora:
      for (int i = 1; i <= cfg_.n_layers; ++i) {
        declare_lora(params_, layer_prefix(i) + "lora_q.", d, d, method_.r, i);
        declare_lora(params_, layer_prefix(i) + "lora_v.", d, d, method_.r, i);
      }
      hooks_.projection = [this](Engine& e, int layer, char which, const Tensor& x, const Tensor& w,
                                 const Tensor& b) {
        const std::string pre = layer_prefix(layer) + (which == 'q' ? "lora_q." : "lora_v.");
        // alpha = r, so the alpha / r scaling is 1
        return lora_forward(e, x, w, b, params_.use(e, pre + "A"), params_.use(e, pre + "B"), 1.0);
      };
      break;
    case MethodKind::AdaLora:
      for (int i = 1; i <= cfg_.n_layers; ++i) {
        for (const char* which : {"ada_q.", "ada_v."}) {
          adalora_prefixes_.push_back(layer_prefix(i) + which);
          declare_adalora(params_, adalora_prefixes_.back(), d, d, method_.init_r, i);
        }
      }
      hooks_.projection = [this](Engine& e, int layer, char which, const Tensor& x, const Tensor& w,
                                 const Tensor& b) {
        const std::string pre = layer_prefix(layer) + (which == 'q' ? "ada_q." : "ada_v.");
        return adalora_forward(e, x, w, b, params_.use(e, pre + "P"), params_.use(e, pre + "lambda"),
                               params_.use(e, pre + "Q"), 1.0);
      };
      break;
    case MethodKind::Lst: declare_lst(params_, cfg_, method_); break;
    case MethodKind::Unipt: declare_unipt(params_, cfg_, method_); break;
    case MethodKind::Sherl: declare_sherl(params_, cfg_, method_); break;
    default: break;
  }
  declare_head(params_, cfg_, head_width());
  freeze_policy(params_, method_);
  if (seed) params_.materialize(*seed);
}

int FineTuneModel::head_width() const {
  if (method_.kind == MethodKind::Lst || method_.kind == MethodKind::Unipt) return method_.d_side(cfg_);
  return cfg_.d_model;
}

SideInput FineTuneModel::prepare(Engine& engine, const Tensor& x) {
  if (!method_.is_meft()) throw std::logic_error("prepare() is only defined for MEFT methods");
  Engine::DetachedScope scope(engine);
  SideInput side;
  switch (method_.kind) {
    case MethodKind::Lst: side.taps = encode(engine, params_, cfg_, x, false); break;
    case MethodKind::Unipt:
      side.interactions = unipt_interactions(engine, encode(engine, params_, cfg_, x, false));
      break;
    case MethodKind::Sherl:
      side.taps = encode(engine, params_, cfg_, x, false, nullptr, cfg_.n_layers - 1);
      side.rho = sherl_redundancy(engine, side.taps, cfg_.n_layers);
      break;
    default: break;
  }
  return side;
}

Tensor FineTuneModel::logits_from(Engine& engine, const SideInput& side) {
  switch (method_.kind) {
    case MethodKind::Lst: return classify_head(engine, params_, lst_forward(engine, params_, cfg_, method_, side.taps));
    case MethodKind::Unipt: return classify_head(engine, params_, unipt_aggregate(engine, params_, side.interactions));
    case MethodKind::Sherl: {
      const Tensor out = sherl_forward(engine, params_, cfg_, method_, side.taps, side.rho);
      return classify_head(engine, params_, final_norm(engine, params_, cfg_, out));
    }
    default: throw std::logic_error("logits_from() is only defined for MEFT methods");
  }
}

Tensor FineTuneModel::logits(Engine& engine, const Tensor& x) {
  if (method_.is_meft()) return logits_from(engine, prepare(engine, x));
  const bool hooked = hooks_.projection || hooks_.sublayer_out;
  const LayerTaps taps = encode(engine, params_, cfg_, x, true, hooked ? &hooks_ : nullptr);
  return classify_head(engine, params_, final_norm(engine, params_, cfg_, taps.final()));
}

}  // namespace meftlab
