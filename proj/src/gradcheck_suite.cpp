#include "meftlab/gradcheck_suite.hpp"

#include <random>

#include "meftlab/meft.hpp"
#include "meftlab/model.hpp"
#include "meftlab/ops.hpp"
#include "meftlab/peft.hpp"

namespace meftlab {
namespace {

using ForwardFn = std::function<Tensor(Engine&, ParamStore&)>;

Tensor random_tensor(Shape s, std::uint64_t seed, double std = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std);
  Buffer b(s.size());
  for (double& v : b) v = dist(rng);
  return Tensor(s, std::move(b));
}

// Scalar loss = mean(y * probe) with a fixed probe, so every output element
// carries a distinct weight.
LossClosure probe_loss(ForwardFn f, std::uint64_t seed) {
  return [f = std::move(f), seed](Engine& e, ParamStore& p) {
    const Tensor y = f(e, p);
    const Tensor w = random_tensor(y.shape(), seed ^ 0xabcdefULL);
    return ops::mean(e, ops::mean(e, ops::mul(e, y, w), 0), 1);
  };
}

void leaf(ParamStore& p, const std::string& name, Shape s, double std = 1.0) {
  ParamEntry e{name, s, Role::Weight, Owner::Side, InitSpec::normal(std)};
  p.declare(std::move(e));
}

struct Runner {
  std::uint64_t seed;
  GradcheckOptions opts;
  std::vector<SuiteCase> out;

  void check(const std::string& name, ParamStore& params, const LossClosure& loss) {
    if (!params.materialized()) params.materialize(seed);
    Engine engine(Precision::F64);
    engine.set_parallel_kernels(false);
    out.push_back({name, finite_diff_check(engine, params, loss, opts)});
  }

  // Single-leaf-set primitive case: declares leaves, then checks probe(f).
  void primitive(const std::string& name, const std::vector<std::pair<std::string, Shape>>& leaves,
                 ForwardFn f) {
    ParamStore p;
    for (const auto& [n, s] : leaves) leaf(p, n, s);
    check(name, p, probe_loss(std::move(f), seed + out.size()));
  }
};

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.seq_len = 6;
  c.d_input = 4;
  c.n_classes = 3;
  c.proj_dim = 8;
  c.init_std = 0.3;
  c.frontend_std = 0.3;
  return c;
}

}  // namespace

std::vector<SuiteCase> run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts) {
  Runner r{seed, opts, {}};
  const Shape s34{3, 4};
  using ops::mean;
  auto U = [](ParamStore& p, const char* n, Engine& e) { return p.use(e, n); };

  r.primitive("matmul", {{"a", s34}, {"b", {4, 5}}},
              [&](Engine& e, ParamStore& p) { return ops::matmul(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("add", {{"a", s34}, {"b", s34}},
              [&](Engine& e, ParamStore& p) { return ops::add(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("add-row-broadcast", {{"a", s34}, {"b", {1, 4}}},
              [&](Engine& e, ParamStore& p) { return ops::add(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("mul", {{"a", s34}, {"b", s34}},
              [&](Engine& e, ParamStore& p) { return ops::mul(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("mul-col-broadcast", {{"a", s34}, {"b", {3, 1}}},
              [&](Engine& e, ParamStore& p) { return ops::mul(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("mul-scalar-broadcast", {{"a", s34}, {"b", {1, 1}}},
              [&](Engine& e, ParamStore& p) { return ops::mul(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("scale", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return ops::scale(e, U(p, "a", e), -1.7); });
  r.primitive("transpose", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return ops::transpose(e, U(p, "a", e)); });
  r.primitive("reshape", {{"a", s34}},
              [&](Engine& e, ParamStore& p) { return ops::reshape(e, U(p, "a", e), {2, 6}); });
  r.primitive("concat-rows", {{"a", s34}, {"b", {2, 4}}},
              [&](Engine& e, ParamStore& p) { return ops::concat_rows(e, {U(p, "a", e), U(p, "b", e)}); });
  r.primitive("concat-cols", {{"a", s34}, {"b", {3, 2}}},
              [&](Engine& e, ParamStore& p) { return ops::concat_cols(e, {U(p, "a", e), U(p, "b", e)}); });
  r.primitive("slice-cols", {{"a", s34}},
              [&](Engine& e, ParamStore& p) { return ops::slice_cols(e, U(p, "a", e), 1, 3); });
  r.primitive("shift-rows", {{"a", s34}},
              [&](Engine& e, ParamStore& p) { return ops::shift_rows(e, U(p, "a", e), 1); });
  r.primitive("softmax-rows", {{"a", s34}},
              [&](Engine& e, ParamStore& p) { return ops::softmax_rows(e, U(p, "a", e)); });
  r.primitive("layernorm", {{"x", s34}, {"g", {1, 4}}, {"b", {1, 4}}}, [&](Engine& e, ParamStore& p) {
    return ops::layernorm(e, U(p, "x", e), U(p, "g", e), U(p, "b", e));
  });
  r.primitive("relu", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return ops::relu(e, U(p, "a", e)); });
  r.primitive("gelu", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return ops::gelu(e, U(p, "a", e)); });
  r.primitive("sigmoid", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return ops::sigmoid(e, U(p, "a", e)); });
  r.primitive("mean-axis0", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return mean(e, U(p, "a", e), 0); });
  r.primitive("mean-axis1", {{"a", s34}}, [&](Engine& e, ParamStore& p) { return mean(e, U(p, "a", e), 1); });
  r.primitive("embedding-add", {{"x", s34}, {"t", {5, 4}}},
              [&](Engine& e, ParamStore& p) { return ops::embedding_add(e, U(p, "x", e), U(p, "t", e)); });
  r.primitive("cosine-rows", {{"a", s34}, {"b", s34}},
              [&](Engine& e, ParamStore& p) { return ops::cosine_rows(e, U(p, "a", e), U(p, "b", e)); });
  r.primitive("l1-normalize-rows", {{"a", s34}},
              [&](Engine& e, ParamStore& p) { return ops::l1_normalize_rows(e, U(p, "a", e)); });
  {
    ParamStore p;
    leaf(p, "z", {1, 5});
    r.check("cross-entropy", p, [&](Engine& e, ParamStore& ps) { return ops::cross_entropy(e, U(ps, "z", e), {2}); });
  }

  // Composite forwards.
  {
    ParamStore p;
    leaf(p, "x", {4, 6});
    declare_adapter(p, "ad.", 6, 3, Owner::Side, -1);
    p.materialize(seed);
    // A zero up projection would hide the down path, so start it random.
    for (auto& e : p.entries())
      if (e.name == "ad.up.w") {
        const Tensor t = random_tensor(e.shape, seed + 7, 0.5);
        e.value->assign(t.data().begin(), t.data().end());
      }
    r.check("adapter_forward", p, probe_loss([&](Engine& e, ParamStore& ps) {
              return adapter_forward(e, ps, "ad.", U(ps, "x", e));
            }, seed + 101));
  }
  {
    ParamStore p;
    leaf(p, "x", {4, 6});
    leaf(p, "w", {6, 5});
    leaf(p, "b", {1, 5});
    leaf(p, "A", {6, 2});
    leaf(p, "B", {2, 5});
    r.check("lora_forward", p, probe_loss([&](Engine& e, ParamStore& ps) {
              return lora_forward(e, U(ps, "x", e), U(ps, "w", e), U(ps, "b", e), U(ps, "A", e), U(ps, "B", e), 0.5);
            }, seed + 102));
  }
  {
    ParamStore p;
    leaf(p, "alpha", {1, 1});
    leaf(p, "hf", s34);
    leaf(p, "hg", s34);
    r.check("gate_combine", p, probe_loss([&](Engine& e, ParamStore& ps) {
              return gate_combine(e, U(ps, "alpha", e), 0.1, U(ps, "hf", e), U(ps, "hg", e));
            }, seed + 103));
  }
  {
    ParamStore p;
    leaf(p, "fi", {5, 4});
    leaf(p, "fn", {5, 4});
    r.check("unipt_interact", p, probe_loss([&](Engine& e, ParamStore& ps) {
              return unipt_interact(e, U(ps, "fi", e), U(ps, "fn", e));
            }, seed + 104));
  }
  const ModelConfig cfg = tiny_config();
  {
    const MethodSpec m = MethodSpec::unipt(2);
    ParamStore p;
    declare_unipt(p, cfg, m);
    p.materialize(seed);
    std::vector<Tensor> inter;
    {
      Engine e(Precision::F64);
      Engine::DetachedScope scope(e);
      LayerTaps taps;
      for (int i = 1; i <= cfg.n_layers; ++i) {
        taps.per_layer.push_back(random_tensor({static_cast<std::size_t>(cfg.seq_len),
                                                static_cast<std::size_t>(cfg.d_model)}, seed + 200 + i));
      }
      inter = unipt_interactions(e, taps);
    }
    r.check("unipt_aggregate", p, probe_loss([inter](Engine& e, ParamStore& ps) {
              return unipt_aggregate(e, ps, inter);
            }, seed + 105));
  }
  {
    FineTuneModel model(cfg, MethodSpec::sherl(2), seed);
    ParamStore& p = model.params();
    p.set_frozen_if([](const ParamEntry& e) { return e.owner == Owner::Head; }, true);
    // Non-zero gate so the attention path reaches the output.
    p.at("sherl.gate").value->assign(1, 0.05);
    Engine e(Precision::F64);
    const Tensor x = random_tensor({static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.d_input)},
                                   seed + 300);
    const SideInput side = model.prepare(e, x);
    r.check("sherl_forward", p, [&model, side](Engine& eng, ParamStore&) {
      return ops::cross_entropy(eng, model.logits_from(eng, side), {1});
    });
  }
  return r.out;
}

}  // namespace meftlab
