#include "meftlab/config.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace meftlab {
namespace {

constexpr std::array<std::pair<MethodKind, std::string_view>, 9> kMethodNames{{
    {MethodKind::Vanilla, "vanilla"},
    {MethodKind::Head, "head"},
    {MethodKind::Adapter, "adapter"},
    {MethodKind::Lora, "lora"},
    {MethodKind::AdaLora, "adalora"},
    {MethodKind::BitFit, "bitfit"},
    {MethodKind::Lst, "lst"},
    {MethodKind::Unipt, "unipt"},
    {MethodKind::Sherl, "sherl"},
}};

void require_positive(int v, const char* key) {
  if (v < 1) throw ConfigError(std::string("model.") + key + " must be >= 1");
}

}  // namespace

void ModelConfig::validate() const {
  require_positive(n_layers, "n_layers");
  require_positive(d_model, "d_model");
  require_positive(n_heads, "n_heads");
  require_positive(d_ff, "d_ff");
  require_positive(seq_len, "seq_len");
  require_positive(d_input, "d_input");
  require_positive(n_classes, "n_classes");
  require_positive(proj_dim, "proj_dim");
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (n_classes < 2) throw ConfigError("model.n_classes must be >= 2");
}

ModelConfig ModelConfig::whisper_small() {
  ModelConfig c;
  c.n_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 3072;
  c.seq_len = 1500;
  c.d_input = 80;
  c.n_classes = 6;
  c.proj_dim = 256;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.proj_dim = 32;
  c.init_std = 0.1;
  c.frontend_std = 0.1;
  return c;
}

std::string_view method_name(MethodKind kind) {
  for (const auto& [k, n] : kMethodNames)
    if (k == kind) return n;
  return "?";
}

MethodKind method_from_name(std::string_view name) {
  for (const auto& [k, n] : kMethodNames)
    if (n == name) return k;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string MethodSpec::label() const {
  const std::string base(method_name(kind));
  switch (kind) {
    case MethodKind::Adapter: return base + "_" + std::to_string(dim);
    case MethodKind::Lora: return base + "_r" + std::to_string(r);
    case MethodKind::AdaLora: return base + "_r" + std::to_string(init_r);
    case MethodKind::Lst:
    case MethodKind::Unipt:
    case MethodKind::Sherl: return base + "_rf" + std::to_string(rf);
    default: return base;
  }
}

int MethodSpec::d_side(const ModelConfig& cfg) const {
  if (rf < 1 || cfg.d_model % rf != 0) {
    throw ConfigError("method.rf=" + std::to_string(rf) + " does not divide d_model=" +
                      std::to_string(cfg.d_model));
  }
  return cfg.d_model / rf;
}

int MethodSpec::lst_hidden(const ModelConfig& cfg) const {
  if (h_side > 0) return h_side;
  if (cfg.d_model == 768) return 256;
  return std::max(1, d_side(cfg) / 2);
}

void MethodSpec::validate(const ModelConfig& cfg) const {
  switch (kind) {
    case MethodKind::Adapter:
      if (dim < 1) throw ConfigError("method.dim must be >= 1");
      break;
    case MethodKind::Lora:
      if (r < 1) throw ConfigError("method.r must be >= 1");
      break;
    case MethodKind::AdaLora:
      if (init_r < 1) throw ConfigError("method.init_r must be >= 1");
      break;
    case MethodKind::Sherl:
      if (cfg.n_layers < 3) throw ConfigError("sherl needs at least 3 encoder layers");
      [[fallthrough]];
    case MethodKind::Lst:
    case MethodKind::Unipt:
      (void)d_side(cfg);
      if (!(gate_temperature > 0.0)) throw ConfigError("method.gate_temperature must be > 0");
      break;
    default: break;
  }
}

MethodSpec MethodSpec::adapter(int dim) {
  MethodSpec m{MethodKind::Adapter};
  m.dim = dim;
  return m;
}
MethodSpec MethodSpec::lora(int r) {
  MethodSpec m{MethodKind::Lora};
  m.r = r;
  return m;
}
MethodSpec MethodSpec::adalora(int init_r) {
  MethodSpec m{MethodKind::AdaLora};
  m.init_r = init_r;
  return m;
}
MethodSpec MethodSpec::lst(int rf) {
  MethodSpec m{MethodKind::Lst};
  m.rf = rf;
  return m;
}
MethodSpec MethodSpec::unipt(int rf) {
  MethodSpec m{MethodKind::Unipt};
  m.rf = rf;
  return m;
}
MethodSpec MethodSpec::sherl(int rf) {
  MethodSpec m{MethodKind::Sherl};
  m.rf = rf;
  return m;
}

}  // namespace meftlab
