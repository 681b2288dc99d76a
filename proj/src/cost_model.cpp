#include "meftlab/cost_model.hpp"

#include <vector>

namespace meftlab {
namespace {

using u64 = std::size_t;

// Shape-level stand-in for a tensor: extents, whether it lies on a gradient
// path, and whether it is an activation (parameters are never retained).
struct Sym {
  u64 r{0};
  u64 c{0};
  bool g{false};
  bool act{true};

  [[nodiscard]] u64 size() const { return r * c; }
};

Sym param(u64 r, u64 c, bool trainable) { return {r, c, trainable, false}; }
Sym constant(u64 r, u64 c) { return {r, c, false, true}; }

// Walks a forward pass applying the retention and backward-FLOP rules.
struct Walker {
  u64 elems{0};       // retained elements at the engine width
  u64 mask_bytes{0};  // relu masks, one byte per element
  double flops{0.0};

  static double n(bool b) { return b ? 1.0 : 0.0; }

  Sym matmul(const Sym& a, const Sym& b) {
    Sym out{a.r, b.c, a.g || b.g, true};
    if (!out.g) return out;
    if (b.g && a.act) elems += a.size();
    if (a.g && b.act) elems += b.size();
    flops += 2.0 * static_cast<double>(a.r * a.c * b.c) * (n(a.g) + n(b.g));
    return out;
  }
  Sym add(const Sym& a, const Sym& b) {
    Sym out{a.r, a.c, a.g || b.g, true};
    if (out.g) flops += static_cast<double>(a.size()) * (n(a.g) + n(b.g));
    return out;
  }
  Sym mul(const Sym& a, const Sym& b) {
    Sym out{a.r, a.c, a.g || b.g, true};
    if (!out.g) return out;
    if (a.g && b.act) elems += b.size();
    if (b.g && a.act) elems += a.size();
    flops += static_cast<double>(a.size()) * (n(a.g) + n(b.g));
    return out;
  }
  Sym scale(const Sym& a) {
    if (a.g) flops += static_cast<double>(a.size());
    return {a.r, a.c, a.g, true};
  }
  static Sym transpose(const Sym& a) { return {a.c, a.r, a.g, true}; }
  static Sym cols(const Sym& a, u64 c) { return {a.r, c, a.g, true}; }
  Sym softmax(const Sym& a) {
    if (a.g) {
      elems += a.size();
      flops += 4.0 * static_cast<double>(a.size());
    }
    return {a.r, a.c, a.g, true};
  }
  Sym sigmoid(const Sym& a) {
    if (a.g) {
      elems += a.size();
      flops += 3.0 * static_cast<double>(a.size());
    }
    return {a.r, a.c, a.g, true};
  }
  Sym gelu(const Sym& a) {
    if (a.g) {
      elems += a.size();
      flops += 8.0 * static_cast<double>(a.size());
    }
    return {a.r, a.c, a.g, true};
  }
  Sym relu(const Sym& a) {
    if (a.g) {
      mask_bytes += a.size();
      flops += static_cast<double>(a.size());
    }
    return {a.r, a.c, a.g, true};
  }
  Sym layernorm(const Sym& x, const Sym& gain, const Sym& bias) {
    Sym out{x.r, x.c, x.g || gain.g || bias.g, true};
    if (!out.g) return out;
    elems += x.size() + x.r;
    flops += static_cast<double>(x.size()) * (8.0 * n(x.g) + n(gain.g) + n(bias.g));
    return out;
  }
  Sym mean_rows(const Sym& a) {
    if (a.g) flops += static_cast<double>(a.size());
    return {1, a.c, a.g, true};
  }
  Sym embedding_add(const Sym& x, const Sym& table) {
    Sym out{x.r, x.c, x.g || table.g, true};
    if (out.g) flops += static_cast<double>(x.size()) * (n(x.g) + n(table.g));
    return out;
  }
  Sym cross_entropy(const Sym& logits) {
    if (logits.g) {
      elems += logits.size();
      flops += 2.0 * static_cast<double>(logits.size());
    }
    return {1, 1, logits.g, true};
  }

  Sym linear(const Sym& x, u64 d_out, bool w_train, bool b_train) {
    return add(matmul(x, param(x.c, d_out, w_train)), param(1, d_out, b_train));
  }
  Sym norm(const Sym& x, bool gain_train, bool bias_train) {
    return layernorm(x, param(1, x.c, gain_train), param(1, x.c, bias_train));
  }
};

struct LayerMode {
  bool weights{false};
  bool biases{false};
  bool gains{false};
  u64 lora_r{0};
  u64 ada_r{0};
  u64 adapter_dim{0};
};

struct Dims {
  u64 n, d, f, h, din, k, p;
  int layers;
};

Dims dims_of(const ModelConfig& cfg) {
  return {static_cast<u64>(cfg.seq_len), static_cast<u64>(cfg.d_model), static_cast<u64>(cfg.d_ff),
          static_cast<u64>(cfg.n_heads), static_cast<u64>(cfg.d_input), static_cast<u64>(cfg.n_classes),
          static_cast<u64>(cfg.proj_dim), cfg.n_layers};
}

Sym adapter(Walker& w, const Sym& x, u64 dim) {
  const Sym h = w.norm(x, true, true);
  const Sym down = w.relu(w.linear(h, dim, true, true));
  return w.add(x, w.linear(down, x.c, true, true));
}

Sym projection(Walker& w, const Sym& h, u64 d, const LayerMode& m, bool adapted) {
  const Sym base = w.linear(h, d, m.weights, m.biases);
  if (adapted && m.lora_r) {
    const Sym delta = w.matmul(w.matmul(h, param(d, m.lora_r, true)), param(m.lora_r, d, true));
    return w.add(base, delta);
  }
  if (adapted && m.ada_r) {
    const Sym xp = w.mul(w.matmul(h, param(d, m.ada_r, true)), param(1, m.ada_r, true));
    return w.add(base, w.matmul(xp, param(m.ada_r, d, true)));
  }
  return base;
}

Sym encoder_layer(Walker& w, const Dims& dm, const Sym& x, const LayerMode& m) {
  const Sym h = w.norm(x, m.gains, m.biases);
  const Sym q = projection(w, h, dm.d, m, true);
  const Sym k = projection(w, h, dm.d, m, false);
  const Sym v = projection(w, h, dm.d, m, true);
  const u64 dh = dm.d / dm.h;
  bool any = false;
  for (u64 i = 0; i < dm.h; ++i) {
    const Sym s = w.scale(w.matmul(Walker::cols(q, dh), Walker::transpose(Walker::cols(k, dh))));
    any = w.matmul(w.softmax(s), Walker::cols(v, dh)).g || any;
  }
  Sym attn = w.linear(Sym{dm.n, dm.d, any, true}, dm.d, m.weights, m.biases);
  if (m.adapter_dim) attn = adapter(w, attn, m.adapter_dim);
  const Sym y = w.add(x, attn);
  const Sym h2 = w.norm(y, m.gains, m.biases);
  Sym ff = w.linear(w.gelu(w.linear(h2, dm.f, m.weights, m.biases)), dm.d, m.weights, m.biases);
  if (m.adapter_dim) ff = adapter(w, ff, m.adapter_dim);
  return w.add(y, ff);
}

Sym frontend(Walker& w, const Dims& dm, bool biases) {
  const Sym x = constant(dm.n, dm.din);
  const Sym h1 = w.gelu(w.linear(Walker::cols(x, 3 * dm.din), dm.d, false, biases));
  const Sym h2 = w.gelu(w.linear(Walker::cols(h1, 3 * dm.d), dm.d, false, biases));
  return w.embedding_add(h2, param(dm.n, dm.d, false));
}

void head(Walker& w, const Dims& dm, const Sym& features) {
  const Sym pooled = w.mean_rows(w.linear(features, dm.p, true, true));
  const Sym logits = w.linear(pooled, dm.k, true, true);
  w.scale(w.cross_entropy(logits));  // 1 / batch
}

Sym gate(Walker& w, const Sym& hf, const Sym& hg) {
  const Sym mu = w.sigmoid(w.scale(param(1, 1, true)));
  const Sym one_minus = w.add(w.scale(mu), constant(1, 1));
  return w.add(w.mul(hf, mu), w.mul(hg, one_minus));
}

Walker walk(const ModelConfig& cfg, const MethodSpec& method) {
  const Dims dm = dims_of(cfg);
  Walker w;
  const Sym tap = constant(dm.n, dm.d);
  switch (method.kind) {
    case MethodKind::Vanilla:
    case MethodKind::Head:
    case MethodKind::BitFit:
    case MethodKind::Adapter:
    case MethodKind::Lora:
    case MethodKind::AdaLora: {
      LayerMode m;
      const bool vanilla = method.kind == MethodKind::Vanilla;
      const bool bitfit = method.kind == MethodKind::BitFit;
      m.weights = m.gains = vanilla;
      m.biases = vanilla || bitfit;
      if (method.kind == MethodKind::Lora) m.lora_r = static_cast<u64>(method.r);
      if (method.kind == MethodKind::AdaLora) m.ada_r = static_cast<u64>(method.init_r);
      if (method.kind == MethodKind::Adapter) m.adapter_dim = static_cast<u64>(method.dim);
      Sym x = frontend(w, dm, bitfit);
      for (int i = 0; i < dm.layers; ++i) x = encoder_layer(w, dm, x, m);
      head(w, dm, w.norm(x, m.gains, m.biases));
      break;
    }
    case MethodKind::Lst: {
      const u64 ds = static_cast<u64>(method.d_side(cfg));
      const u64 hs = static_cast<u64>(method.lst_hidden(cfg));
      Sym g = w.linear(tap, ds, true, true);
      for (int i = 0; i < dm.layers; ++i) {
        const Sym f = w.linear(tap, ds, true, true);
        g = adapter(w, gate(w, f, g), hs);
      }
      head(w, dm, g);
      break;
    }
    case MethodKind::Unipt: {
      const u64 ds = static_cast<u64>(method.d_side(cfg));
      std::vector<Sym> e;
      for (int i = 0; i < dm.layers; ++i) {
        e.push_back(w.relu(w.linear(tap, ds, true, true)));
        w.mean_rows(w.linear(e.back(), 1, true, true));
      }
      const Sym wts = w.softmax(Sym{1, static_cast<u64>(dm.layers), true, true});
      Sym out = w.mul(e[0], Walker::cols(wts, 1));
      for (std::size_t i = 1; i < e.size(); ++i) out = w.add(out, w.mul(e[i], Walker::cols(wts, 1)));
      head(w, dm, out);
      break;
    }
    case MethodKind::Sherl: {
      const u64 ds = static_cast<u64>(method.d_side(cfg));
      const u64 shallow = static_cast<u64>(dm.layers - 2);
      for (u64 i = 0; i < shallow; ++i) w.scale(w.relu(w.linear(tap, ds, true, true)));
      const Sym kv{shallow * dm.n, ds, true, true};
      const Sym q = w.matmul(tap, param(dm.d, ds, true));
      const Sym att = w.matmul(w.softmax(w.scale(w.matmul(q, Walker::transpose(kv)))), kv);
      const Sym early = w.matmul(att, param(ds, dm.d, true));
      const Sym out = encoder_layer(w, dm, gate(w, early, tap), LayerMode{});
      head(w, dm, w.norm(out, false, false));
      break;
    }
  }
  return w;
}

struct Counts {
  u64 total{0};
  u64 trainable{0};
};

Counts count_params(const ModelConfig& cfg, const MethodSpec& method) {
  const Dims dm = dims_of(cfg);
  const u64 n = dm.n, d = dm.d, f = dm.f, N = static_cast<u64>(dm.layers);
  const u64 front = 3 * dm.din * d + d + 3 * d * d + d + n * d;
  const u64 layer = 4 * d + 4 * (d * d + d) + d * f + f + f * d + d;
  const u64 backbone = front + N * layer + 2 * d;
  const auto head_of = [&](u64 width) { return width * dm.p + dm.p + dm.p * dm.k + dm.k; };

  u64 method_params = 0;
  u64 head_width = d;
  switch (method.kind) {
    case MethodKind::Adapter: {
      const u64 m = static_cast<u64>(method.dim);
      method_params = N * 2 * (2 * d + d * m + m + m * d + d);
      break;
    }
    case MethodKind::Lora: method_params = N * 2 * (2 * d * static_cast<u64>(method.r)); break;
    case MethodKind::AdaLora: {
      const u64 r = static_cast<u64>(method.init_r);
      method_params = N * 2 * (2 * d * r + r);
      break;
    }
    case MethodKind::Lst: {
      const u64 ds = static_cast<u64>(method.d_side(cfg));
      const u64 hs = static_cast<u64>(method.lst_hidden(cfg));
      method_params = (N + 1) * (d * ds + ds) + N * (2 * ds + ds * hs + hs + hs * ds + ds + 1);
      head_width = ds;
      break;
    }
    case MethodKind::Unipt: {
      const u64 ds = static_cast<u64>(method.d_side(cfg));
      method_params = N * (d * ds + ds) + ds + 1;
      head_width = ds;
      break;
    }
    case MethodKind::Sherl: {
      const u64 ds = static_cast<u64>(method.d_side(cfg));
      method_params = (N - 2) * (d * ds + ds) + 2 * d * ds + 1;
      break;
    }
    default: break;
  }
  const u64 hd = head_of(head_width);
  Counts c;
  c.total = backbone + method_params + hd;
  switch (method.kind) {
    case MethodKind::Vanilla: c.trainable = c.total - front; break;
    case MethodKind::Head: c.trainable = hd; break;
    case MethodKind::BitFit: c.trainable = 2 * d + N * (7 * d + f) + d + hd; break;
    default: c.trainable = method_params + hd; break;
  }
  return c;
}

}  // namespace

CostReport cost_model(const ModelConfig& cfg, const MethodSpec& method, std::size_t batch,
                      std::size_t element_bytes) {
  cfg.validate();
  method.validate(cfg);
  const Counts counts = count_params(cfg, method);
  const Walker w = walk(cfg, method);
  CostReport r;
  r.total_params = counts.total;
  r.trainable_params = counts.trainable;
  r.trainable_ratio_pct = 100.0 * static_cast<double>(counts.trainable) / static_cast<double>(counts.total);
  r.param_bytes = counts.total * element_bytes;
  r.grad_bytes = counts.trainable * element_bytes;
  r.optimizer_bytes = 2 * counts.trainable * element_bytes;
  r.retained_activation_bytes = w.elems * element_bytes + w.mask_bytes;
  r.backward_flops = w.flops;
  r.total_footprint = r.param_bytes + r.grad_bytes + r.optimizer_bytes + r.retained_activation_bytes * batch;
  return r;
}

}  // namespace meftlab
