#include "meftlab/meft.hpp"

#include <cmath>

#include "meftlab/ops.hpp"
#include "meftlab/peft.hpp"

namespace meftlab {
namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void declare_side_linear(ParamStore& p, const std::string& name, int d_in, int d_out, bool bias,
                         int layer) {
  p.declare({name + ".w", {sz(d_in), sz(d_out)}, Role::Weight, Owner::Side, InitSpec::scaled(), layer,
             false, true});
  if (bias) {
    p.declare({name + ".b", {1, sz(d_out)}, Role::Bias, Owner::Side, InitSpec::zeros(), layer, false,
               true});
  }
}

void declare_gate(ParamStore& p, const std::string& name, int layer) {
  p.declare({name, {1, 1}, Role::Scalar, Owner::Side, InitSpec::zeros(), layer, false, true});
}

Tensor side_linear(Engine& e, ParamStore& p, const std::string& name, const Tensor& x) {
  const Tensor w = p.use(e, name + ".w");
  if (!p.contains(name + ".b")) return ops::matmul(e, x, w);
  const Tensor b = p.use(e, name + ".b");
  return ops::linear(e, x, w, &b);
}

std::string indexed(const char* base, int i) { return std::string(base) + std::to_string(i); }

}  // namespace

Tensor gate_combine(Engine& engine, const Tensor& alpha, double temperature, const Tensor& h_f,
                    const Tensor& h_g) {
  if (h_f.shape() != h_g.shape()) {
    throw ShapeError("gate_combine: " + h_f.shape().str() + " vs " + h_g.shape().str());
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("gate_combine: temperature must be > 0");
  const Tensor mu = ops::sigmoid(engine, ops::scale(engine, alpha, 1.0 / temperature));
  const Tensor one_minus = ops::add(engine, ops::scale(engine, mu, -1.0), Tensor::scalar(1.0));
  return ops::add(engine, ops::mul(engine, h_f, mu), ops::mul(engine, h_g, one_minus));
}

void declare_lst(ParamStore& params, const ModelConfig& cfg, const MethodSpec& method) {
  const int ds = method.d_side(cfg);
  for (int i = 0; i <= cfg.n_layers; ++i) declare_side_linear(params, indexed("lst.down", i), cfg.d_model, ds, true, i);
  for (int i = 1; i <= cfg.n_layers; ++i) {
    declare_adapter(params, indexed("lst.block", i) + ".", ds, method.lst_hidden(cfg), Owner::Side, i);
    declare_gate(params, indexed("lst.gate", i), i);
  }
}

Tensor lst_forward(Engine& engine, ParamStore& params, const ModelConfig& cfg,
                   const MethodSpec& method, const LayerTaps& taps) {
  if (taps.per_layer.size() != sz(cfg.n_layers)) throw ShapeError("lst_forward: incomplete taps");
  (void)method.d_side(cfg);
  Engine::Tag tag(engine, Owner::Side, -1);
  Tensor g = side_linear(engine, params, "lst.down0", taps.embeddings);
  for (int i = 1; i <= cfg.n_layers; ++i) {
    const Tensor f = side_linear(engine, params, indexed("lst.down", i), taps.layer(i));
    const Tensor mixed = gate_combine(engine, params.use(engine, indexed("lst.gate", i)),
                                      method.gate_temperature, f, g);
    g = adapter_forward(engine, params, indexed("lst.block", i) + ".", mixed, cfg.ln_eps);
  }
  return g;
}

Tensor unipt_interact(Engine& engine, const Tensor& f_i, const Tensor& f_n) {
  if (f_i.shape() != f_n.shape()) {
    throw ShapeError("unipt_interact: " + f_i.shape().str() + " vs " + f_n.shape().str());
  }
  const Tensor a = ops::relu(engine, ops::matmul(engine, f_n, ops::transpose(engine, f_i)));
  const Tensor a_hat = ops::l1_normalize_rows(engine, a);
  return ops::add(engine, ops::matmul(engine, a_hat, f_i), f_i);
}

void declare_unipt(ParamStore& params, const ModelConfig& cfg, const MethodSpec& method) {
  const int ds = method.d_side(cfg);
  for (int i = 1; i <= cfg.n_layers; ++i) declare_side_linear(params, indexed("unipt.proj", i), cfg.d_model, ds, true, i);
  declare_side_linear(params, "unipt.conf", ds, 1, true, -1);
}

std::vector<Tensor> unipt_interactions(Engine& engine, const LayerTaps& taps) {
  Engine::Tag tag(engine, Owner::Side, -1);
  std::vector<Tensor> out;
  for (const auto& tap : taps.per_layer) out.push_back(unipt_interact(engine, tap, taps.final()));
  return out;
}

Tensor unipt_aggregate(Engine& engine, ParamStore& params, const std::vector<Tensor>& interactions) {
  Engine::Tag tag(engine, Owner::Side, -1);
  std::vector<Tensor> e;
  std::vector<Tensor> conf;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    e.push_back(ops::relu(engine, side_linear(engine, params, indexed("unipt.proj", static_cast<int>(i + 1)),
                                              interactions[i])));
    conf.push_back(ops::mean(engine, side_linear(engine, params, "unipt.conf", e.back()), 0));
  }
  const Tensor w = ops::softmax_rows(engine, ops::concat_cols(engine, conf));
  Tensor out = ops::mul(engine, e[0], ops::slice_cols(engine, w, 0, 1));
  for (std::size_t i = 1; i < e.size(); ++i) {
    out = ops::add(engine, out, ops::mul(engine, e[i], ops::slice_cols(engine, w, i, i + 1)));
  }
  return out;
}

Tensor unipt_aggregate(Engine& engine, ParamStore& params, const LayerTaps& taps) {
  return unipt_aggregate(engine, params, unipt_interactions(engine, taps));
}

std::vector<double> sherl_redundancy_pooled(const std::vector<std::vector<double>>& pooled) {
  const std::size_t m = pooled.size();
  std::vector<double> rho(m, 0.0);
  if (m < 2) return rho;
  const auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      dot += a[k] * b[k];
      na += a[k] * a[k];
      nb += b[k] * b[k];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) s += std::max(0.0, cosine(pooled[i], pooled[j]));
    rho[i] = std::min(1.0, s / static_cast<double>(m - 1));
  }
  return rho;
}

std::vector<double> sherl_redundancy(Engine& engine, const LayerTaps& taps, int n_layers) {
  if (n_layers < 3) throw ConfigError("sherl needs at least 3 encoder layers, got " + std::to_string(n_layers));
  if (taps.per_layer.size() < sz(n_layers - 2)) throw ShapeError("sherl_redundancy: missing taps");
  Engine::DetachedScope scope(engine);
  std::vector<std::vector<double>> pooled;
  for (int i = 1; i <= n_layers - 2; ++i) {
    const Tensor v = ops::mean(engine, taps.layer(i), 0);
    pooled.emplace_back(v.data().begin(), v.data().end());
  }
  return sherl_redundancy_pooled(pooled);
}

void declare_sherl(ParamStore& params, const ModelConfig& cfg, const MethodSpec& method) {
  if (cfg.n_layers < 3) throw ConfigError("sherl needs at least 3 encoder layers");
  const int ds = method.d_side(cfg);
  for (int i = 1; i <= cfg.n_layers - 2; ++i) declare_side_linear(params, indexed("sherl.proj", i), cfg.d_model, ds, true, i);
  declare_side_linear(params, "sherl.q", cfg.d_model, ds, false, cfg.n_layers - 1);
  declare_side_linear(params, "sherl.out", ds, cfg.d_model, false, cfg.n_layers - 1);
  declare_gate(params, "sherl.gate", cfg.n_layers - 1);
}

Tensor sherl_forward(Engine& engine, ParamStore& params, const ModelConfig& cfg,
                     const MethodSpec& method, const LayerTaps& taps, const std::vector<double>& rho) {
  const int n = cfg.n_layers;
  if (n < 3) throw ConfigError("sherl needs at least 3 encoder layers");
  if (taps.per_layer.size() < sz(n - 1)) throw ShapeError("sherl_forward: needs taps 1..N-1");
  if (rho.size() != sz(n - 2)) throw std::invalid_argument("sherl_forward: need N-2 redundancy rates");
  const int ds = method.d_side(cfg);
  Tensor combined;
  {
    Engine::Tag tag(engine, Owner::Side, -1);
    std::vector<Tensor> shallow;
    for (int i = 1; i <= n - 2; ++i) {
      const Tensor s = ops::relu(engine, side_linear(engine, params, indexed("sherl.proj", i), taps.layer(i)));
      shallow.push_back(ops::scale(engine, s, 1.0 - rho[sz(i - 1)]));
    }
    const Tensor kv = ops::concat_rows(engine, shallow);
    const Tensor& guide = taps.layer(n - 1);
    const Tensor q = side_linear(engine, params, "sherl.q", guide);
    const Tensor scores = ops::scale(engine, ops::matmul(engine, q, ops::transpose(engine, kv)),
                                     1.0 / std::sqrt(static_cast<double>(ds)));
    const Tensor att = ops::matmul(engine, ops::softmax_rows(engine, scores), kv);
    const Tensor early = side_linear(engine, params, "sherl.out", att);
    combined = gate_combine(engine, params.use(engine, "sherl.gate"), method.gate_temperature, early, guide);
  }
  return encoder_layer(engine, params, cfg, n, combined);
}

}  // namespace meftlab
