#include <cmath>
#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "meftlab/backbone.hpp"
#include "meftlab/gradcheck.hpp"
#include "meftlab/kernels.hpp"
#include "meftlab/meft.hpp"
#include "meftlab/peft.hpp"

using namespace meftlab;
using namespace testing;

TEST_CASE("softmax of equal logits is uniform") {
  Engine e;
  const Tensor y = ops::softmax_rows(e, Tensor::from_rows({{0, 0}}));
  CHECK(y.at(0, 0) == 0.5);
  CHECK(y.at(0, 1) == 0.5);
}

TEST_CASE("matmul by the identity") {
  Engine e;
  const Tensor y = ops::matmul(e, Tensor::from_rows({{1, 0}, {0, 1}}), Tensor::from_rows({{3}, {4}}));
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.at(0, 0) == 3);
  CHECK(y.at(1, 0) == 4);
}

TEST_CASE("layernorm of [1,3] against hand arithmetic") {
  Engine e;
  const double eps = 1e-5;
  const Tensor y = ops::layernorm(e, Tensor::from_rows({{1, 3}}), Tensor::from_rows({{1, 1}}),
                                  Tensor::from_rows({{0, 0}}), eps);
  // mean 2, variance 1
  const double expect = 1.0 / std::sqrt(1.0 + eps);
  CHECK(y.at(0, 0) == doctest::Approx(-expect).epsilon(1e-15));
  CHECK(y.at(0, 1) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(y.at(0, 1) < 1.0);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Engine e;
  try {
    ops::matmul(e, Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(e, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("primitive names round-trip and unknown kinds fail") {
  for (Op op : {Op::MatMul, Op::SoftmaxRows, Op::LayerNorm, Op::CrossEntropyWithLogits, Op::L1NormalizeRows}) {
    CHECK(op_from_name(op_name(op)) == op);
  }
  CHECK(op_from_name("softmax-rows") == Op::SoftmaxRows);
  CHECK_THROWS_AS(op_from_name("conv2d"), std::invalid_argument);
}

TEST_CASE("gradient of sum(w*x) is x") {
  ParamStore p;
  leaf(p, "w", {2, 3});
  p.materialize(1);
  const Tensor x = random_tensor({2, 3}, 9);
  Engine e;
  e.backward(sum_all(e, ops::mul(e, p.use(e, "w"), x)));
  const Buffer& g = p.at("w").grad;
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects a non-scalar loss") {
  ParamStore p;
  leaf(p, "w", {2, 2});
  p.materialize(1);
  Engine e;
  CHECK_THROWS(e.backward(ops::relu(e, p.use(e, "w"))));
}

TEST_CASE("loss downstream of a detached region visits no backbone node") {
  ParamStore p;
  leaf(p, "bb", {4, 4}, 1.0, Owner::Backbone);
  leaf(p, "head", {4, 2}, 1.0, Owner::Head);
  p.materialize(3);
  Engine e;
  Tensor feat;
  {
    Engine::DetachedScope scope(e);
    Engine::Tag tag(e, Owner::Backbone, 1);
    feat = ops::gelu(e, ops::matmul(e, random_tensor({3, 4}, 1), p.use(e, "bb")));
  }
  CHECK_FALSE(feat.on_tape());
  Engine::Tag tag(e, Owner::Head);
  e.backward(sum_all(e, ops::matmul(e, feat, p.use(e, "head"))));
  CHECK(e.last_backward().visited(Owner::Backbone) == 0);
  CHECK(e.last_backward().visited(Owner::Head) > 0);
  for (double g : p.at("bb").grad) CHECK(g == 0.0);
}

TEST_CASE("random three-layer MLP passes the finite-difference check") {
  ParamStore p;
  leaf(p, "w1", {5, 7}, 0.5);
  leaf(p, "b1", {1, 7}, 0.5);
  leaf(p, "w2", {7, 6}, 0.5);
  leaf(p, "b2", {1, 6}, 0.5);
  leaf(p, "w3", {6, 3}, 0.5);
  p.materialize(42);
  const Tensor x = random_tensor({4, 5}, 5);
  Engine e(Precision::F64);
  const auto report = finite_diff_check(e, p, [&](Engine& en, ParamStore& ps) {
    Tensor h = ops::gelu(en, ops::linear(en, x, ps.use(en, "w1"), nullptr));
    h = ops::add(en, h, ps.use(en, "b1"));
    h = ops::sigmoid(en, ops::add(en, ops::matmul(en, h, ps.use(en, "w2")), ps.use(en, "b2")));
    const Tensor logits = ops::matmul(en, h, ps.use(en, "w3"));
    return ops::cross_entropy(en, logits, {0, 2, 1, 1});
  });
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("linear regression gradients are essentially exact") {
  ParamStore p;
  leaf(p, "w", {3, 1});
  p.materialize(2);
  const Tensor x = random_tensor({8, 3}, 3);
  const Tensor y = random_tensor({8, 1}, 4);
  Engine e(Precision::F64);
  const auto report = finite_diff_check(e, p, [&](Engine& en, ParamStore& ps) {
    const Tensor r = ops::add(en, ops::matmul(en, x, ps.use(en, "w")), ops::scale(en, y, -1.0));
    return ops::mean(en, ops::mean(en, ops::mul(en, r, r), 0), 1);
  });
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("LST side network at RF=4, seed 7, passes the finite-difference check") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.seq_len = 5;
  cfg.d_input = 3;
  cfg.n_classes = 2;
  cfg.proj_dim = 4;
  const MethodSpec m = MethodSpec::lst(4);
  ParamStore p;
  declare_lst(p, cfg, m);
  p.materialize(7);
  // gates away from zero and non-zero up projections exercise every path
  for (auto& entry : p.entries()) {
    if (entry.name.find("up.w") != std::string::npos || entry.name.find("gate") != std::string::npos) {
      *entry.value = values(random_tensor(entry.shape, 17 + entry.value->size(), 0.3));
    }
  }
  LayerTaps taps;
  taps.embeddings = random_tensor({5, 8}, 70);
  for (int i = 0; i < 2; ++i) taps.per_layer.push_back(random_tensor({5, 8}, 71 + i));
  const Tensor probe = random_tensor({5, 2}, 99);
  Engine e(Precision::F64);
  const auto report = finite_diff_check(e, p, [&](Engine& en, ParamStore& ps) {
    return sum_all(en, ops::mul(en, lst_forward(en, ps, cfg, m, taps), probe));
  });
  CHECK(report.pass);
}

TEST_CASE("frozen parameters are reported as skipped") {
  ParamStore p;
  leaf(p, "a", {2, 2});
  leaf(p, "b", {2, 2}).frozen = true;
  p.materialize(5);
  Engine e(Precision::F64);
  const auto report = finite_diff_check(e, p, [](Engine& en, ParamStore& ps) {
    return sum_all(en, ops::mul(en, ps.use(en, "a"), ps.use(en, "b")));
  });
  REQUIRE(report.entries.size() == 2);
  CHECK_FALSE(report.entries[0].skipped);
  CHECK(report.entries[1].skipped);
  CHECK(report.entries[1].note == "no gradient, skipped");
}

TEST_CASE("finite-difference check needs f64 and a finite loss") {
  ParamStore p;
  leaf(p, "a", {1, 1});
  p.materialize(5);
  Engine f32(Precision::F32);
  CHECK_THROWS(finite_diff_check(f32, p, [](Engine& en, ParamStore& ps) { return ps.use(en, "a"); }));
  Engine f64(Precision::F64);
  CHECK_THROWS_AS(finite_diff_check(f64, p,
                                    [](Engine& en, ParamStore& ps) {
                                      return ops::scale(en, ps.use(en, "a"), std::nan(""));
                                    }),
                  std::runtime_error);
}

namespace {

ModelConfig deep_config() {
  ModelConfig c;
  c.n_layers = 12;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.seq_len = 6;
  c.d_input = 3;
  c.n_classes = 2;
  c.proj_dim = 4;
  return c;
}

}  // namespace

TEST_CASE("a 12-layer backbone inside a detached scope retains nothing") {
  const ModelConfig cfg = deep_config();
  ParamStore p = init_backbone(cfg, 1);
  p.freeze_all(false);
  const Tensor x = random_tensor({6, 3}, 2);
  Engine e;
  {
    Engine::DetachedScope scope(e);
    const LayerTaps taps = encode(e, p, cfg, x, true);
    CHECK_FALSE(taps.final().on_tape());
  }
  CHECK(e.peak_retained_bytes() == 0);
  CHECK(e.tape_size() == 0);
}

TEST_CASE("retention does not change forward values") {
  const ModelConfig cfg = deep_config();
  ParamStore p = init_backbone(cfg, 4);
  p.freeze_all(false);
  const Tensor x = random_tensor({6, 3}, 8);
  Engine a;
  Engine b;
  const LayerTaps kept = encode(a, p, cfg, x, true);
  const LayerTaps detached = encode(b, p, cfg, x, false);
  CHECK(a.peak_retained_bytes() > 0);
  CHECK(b.peak_retained_bytes() == 0);
  for (int i = 1; i <= cfg.n_layers; ++i) CHECK(bitwise_equal(kept.layer(i), detached.layer(i)));
}

TEST_CASE("nested detached scopes still retain nothing") {
  ParamStore p;
  leaf(p, "w", {3, 3});
  p.materialize(1);
  Engine e;
  {
    Engine::DetachedScope outer(e);
    {
      Engine::DetachedScope inner(e);
      ops::relu(e, p.use(e, "w"));
    }
    ops::gelu(e, p.use(e, "w"));
  }
  CHECK(e.peak_retained_bytes() == 0);
  CHECK(e.retaining());
}

TEST_CASE("peak retained bytes") {
  SUBCASE("zero without grad-requiring work") {
    Engine e;
    ops::matmul(e, random_tensor({3, 3}, 1), random_tensor({3, 3}, 2));
    CHECK(e.peak_retained_bytes() == 0);
  }
  SUBCASE("an f32 matmul keeping its 4x5 input costs 80 bytes") {
    ParamStore p;
    leaf(p, "w", {5, 3});
    p.materialize(1);
    Engine e(Precision::F32);
    ops::matmul(e, random_tensor({4, 5}, 3), p.use(e, "w"));
    CHECK(e.peak_retained_bytes() == 80);
  }
  SUBCASE("relu keeps a one-byte mask per element") {
    ParamStore p;
    leaf(p, "w", {4, 6});
    p.materialize(1);
    Engine e(Precision::F64);
    ops::relu(e, p.use(e, "w"));
    CHECK(e.peak_retained_bytes() == 24);
  }
  SUBCASE("two sequential runs without reset peak at the larger one") {
    ParamStore p;
    leaf(p, "w", {6, 6});
    p.materialize(1);
    auto run = [&](Engine& e, std::size_t rows) {
      const Tensor h = ops::gelu(e, ops::matmul(e, random_tensor({rows, 6}, rows), p.use(e, "w")));
      e.backward(sum_all(e, h));
    };
    Engine small, large, both;
    run(small, 2);
    run(large, 9);
    run(both, 2);
    run(both, 9);
    CHECK(both.peak_retained_bytes() == std::max(small.peak_retained_bytes(), large.peak_retained_bytes()));
    CHECK(both.live_retained_bytes() == 0);
  }
}

TEST_CASE("frozen parameters receive exactly zero gradient") {
  ParamStore p;
  leaf(p, "a", {3, 3});
  leaf(p, "b", {3, 3}).frozen = true;
  p.materialize(11);
  Engine e;
  e.backward(sum_all(e, ops::softmax_rows(e, ops::matmul(e, p.use(e, "a"), p.use(e, "b")))));
  for (double g : p.at("b").grad) CHECK(g == 0.0);
  bool any = false;
  for (double g : p.at("a").grad) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("nodes off the gradient path are never recorded") {
  ParamStore p;
  leaf(p, "w", {3, 3});
  p.materialize(1);
  Engine e;
  const Tensor c = ops::relu(e, random_tensor({3, 3}, 4));
  CHECK_FALSE(c.on_tape());
  const Tensor y = ops::matmul(e, c, p.use(e, "w"));
  CHECK(y.on_tape());
  for (std::size_t i = 0; i < e.tape_size(); ++i) {
    const TapeNode& n = e.node(static_cast<NodeId>(i));
    if (!n.requires_grad_path) CHECK(n.retained_bytes == 0);
  }
}

TEST_CASE("matmul backward costs 2mkn per input needing a gradient") {
  ParamStore p;
  leaf(p, "a", {4, 5});
  leaf(p, "b", {5, 3});
  p.materialize(1);
  Engine e;
  const Tensor y = ops::matmul(e, p.use(e, "a"), p.use(e, "b"));
  const double matmul_flops = e.node(*y.node()).backward_flops;
  CHECK(matmul_flops == 2.0 * 2 * 4 * 5 * 3);
  Engine f;
  const Tensor z = ops::matmul(f, random_tensor({4, 5}, 1), p.use(f, "b"));
  CHECK(f.node(*z.node()).backward_flops == 2.0 * 4 * 5 * 3);
}

TEST_CASE("softmax rows sum to one and l1 rows to one or zero") {
  Engine e;
  const Tensor s = ops::softmax_rows(e, random_tensor({8, 8}, 3, 4.0));
  for (std::size_t r = 0; r < 8; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 8; ++c) sum += s.at(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  Buffer raw = values(random_tensor({4, 5}, 6));
  for (std::size_t c = 0; c < 5; ++c) raw[5 + c] = 0.0;
  const Tensor l1 = ops::l1_normalize_rows(e, Tensor({4, 5}, raw));
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) sum += std::abs(l1.at(r, c));
    if (r == 1) {
      CHECK(sum == 0.0);
    } else {
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("f32 engines round every result to float") {
  Engine e(Precision::F32);
  const Tensor y = ops::scale(e, Tensor::from_rows({{0.1, 1.0 / 3.0}}), 1.0);
  for (double v : y.data()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("serial and OpenMP kernels agree bitwise") {
  namespace k = kernels;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const std::size_t m = 7, n = 5, kk = 6;
      const Tensor a = random_tensor(ta ? Shape{kk, m} : Shape{m, kk}, 1);
      const Tensor b = random_tensor(tb ? Shape{n, kk} : Shape{kk, n}, 2);
      Buffer c1(m * n), c2(m * n);
      const k::GemmDims dims{m, n, kk, ta, tb};
      k::gemm_serial(dims, a.data(), b.data(), c1);
      k::gemm_parallel(dims, a.data(), b.data(), c2);
      CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);
      // naive triple loop
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t q = 0; q < kk; ++q) {
            const double av = ta ? a.at(q, i) : a.at(i, q);
            const double bv = tb ? b.at(j, q) : b.at(q, j);
            s += av * bv;
          }
          CHECK(c1[i * n + j] == doctest::Approx(s).epsilon(1e-13));
        }
      }
    }
  }
  const Tensor x = random_tensor({9, 11}, 3);
  Buffer s1(99), s2(99);
  k::softmax_rows_serial(9, 11, x.data(), s1);
  k::softmax_rows_parallel(9, 11, x.data(), s2);
  CHECK(s1 == s2);
  const Tensor g = random_tensor({1, 11}, 4), be = random_tensor({1, 11}, 5);
  Buffer y1(99), y2(99), h1(99), h2(99), r1(9), r2(9);
  k::layernorm_rows_serial(9, 11, x.data(), g.data(), be.data(), 1e-5, y1, h1, r1);
  k::layernorm_rows_parallel(9, 11, x.data(), g.data(), be.data(), 1e-5, y2, h2, r2);
  CHECK(y1 == y2);
  CHECK(h1 == h2);
  CHECK(r1 == r2);
}

TEST_CASE("parallel and serial engines produce identical gradients") {
  ParamStore p1, p2;
  for (ParamStore* p : {&p1, &p2}) {
    leaf(*p, "w", {16, 16});
    p->materialize(3);
  }
  const Tensor x = random_tensor({32, 16}, 4);
  Engine a, b;
  a.set_parallel_kernels(true);
  b.set_parallel_kernels(false);
  a.backward(sum_all(a, ops::softmax_rows(a, ops::matmul(a, x, p1.use(a, "w")))));
  b.backward(sum_all(b, ops::softmax_rows(b, ops::matmul(b, x, p2.use(b, "w")))));
  CHECK(p1.at("w").grad == p2.at("w").grad);
}
