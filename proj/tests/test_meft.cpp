#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mat_oracle.hpp"
#include "meftlab/meft.hpp"
#include "meftlab/model.hpp"
#include "meftlab/train.hpp"

using namespace meftlab;
using namespace testing;
using namespace oracle;

namespace {

ModelConfig tiny(int layers, int d) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = d;
  c.n_heads = 2;
  c.d_ff = 2 * d;
  c.seq_len = 5;
  c.d_input = 3;
  c.n_classes = 2;
  c.proj_dim = 3;
  return c;
}

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  m.v = values(t);
  return m;
}

Mat matmul(const Mat& a, const Mat& b) {
  Mat y(a.r, b.c);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = 0; j < b.c; ++j)
      for (std::size_t k = 0; k < a.c; ++k) y(i, j) += a(i, k) * b(k, j);
  return y;
}

Mat relu(Mat x) {
  for (double& t : x.v) t = std::max(0.0, t);
  return x;
}

Mat scaled(Mat x, double s) {
  for (double& t : x.v) t *= s;
  return x;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Mat mix(double mu, const Mat& f, const Mat& g) { return add(scaled(f, mu), scaled(g, 1.0 - mu)); }

Mat adapter(const Mat& x, const ParamStore& p, const std::string& pre) {
  return add(x, dense(relu(dense(layer_norm(x, p, pre + "ln", 1e-5), p, pre + "down")), p, pre + "up"));
}

void randomize(ParamStore& p, std::uint64_t seed) {
  for (auto& e : p.entries()) {
    if (!e.value) continue;
    *e.value = values(random_tensor(e.shape, seed++, 0.5));
  }
}

LayerTaps random_taps(int layers, std::size_t n, std::size_t d, std::uint64_t seed) {
  LayerTaps t;
  t.embeddings = random_tensor({n, d}, seed);
  for (int i = 1; i <= layers; ++i) t.per_layer.push_back(random_tensor({n, d}, seed + static_cast<std::uint64_t>(i)));
  return t;
}

Mat softmax_attend(const Mat& q, const Mat& kv, double scale) {
  Mat out(q.r, kv.c);
  for (std::size_t t = 0; t < q.r; ++t) {
    std::vector<double> s(kv.r);
    double mx = -1e300, z = 0.0;
    for (std::size_t u = 0; u < kv.r; ++u) {
      for (std::size_t j = 0; j < q.c; ++j) s[u] += q(t, j) * kv(u, j);
      s[u] *= scale;
      mx = std::max(mx, s[u]);
    }
    for (double& e : s) z += (e = std::exp(e - mx));
    for (std::size_t u = 0; u < kv.r; ++u)
      for (std::size_t j = 0; j < kv.c; ++j) out(t, j) += s[u] / z * kv(u, j);
  }
  return out;
}

}  // namespace

TEST_CASE("gate combine examples") {
  Engine e;
  const Tensor f({1, 2}, {4.0, 4.0});
  const Tensor g({1, 2}, {2.0, 2.0});
  CHECK(values(gate_combine(e, Tensor::scalar(0.0), 0.1, f, g)) == Buffer{3.0, 3.0});
  CHECK(values(gate_combine(e, Tensor::scalar(10.0), 0.1, f, g))[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(values(gate_combine(e, Tensor::scalar(-10.0), 0.1, f, g))[0] == doctest::Approx(2.0).epsilon(1e-12));
  // mu = 1 / (1 + e^-1), e^-1 from its series
  double inv_e = 0.0, term = 1.0;
  for (int k = 0; k < 30; ++k) {
    inv_e += term;
    term *= -1.0 / (k + 1);
  }
  const double mu = 1.0 / (1.0 + inv_e);
  CHECK(mu == doctest::Approx(0.7310585).epsilon(1e-7));
  const Tensor one({1, 1}, {1.0});
  const Tensor zero({1, 1}, {0.0});
  CHECK(values(gate_combine(e, Tensor::scalar(0.1), 0.1, one, zero))[0] == doctest::Approx(mu).epsilon(1e-14));
  CHECK_THROWS_AS(gate_combine(e, Tensor::scalar(0.0), 0.0, f, g), std::invalid_argument);
  CHECK_THROWS_AS(gate_combine(e, Tensor::scalar(0.0), 0.1, f, Tensor({2, 1}, {1.0, 1.0})), ShapeError);
}

TEST_CASE("lst side network matches a straight-line duplicate") {
  const ModelConfig cfg = tiny(2, 4);
  const MethodSpec m = MethodSpec::lst(2);
  ParamStore p;
  declare_lst(p, cfg, m);
  p.materialize(11);
  randomize(p, 11);
  const LayerTaps taps = random_taps(2, 5, 4, 40);
  Engine e;
  const Tensor got = lst_forward(e, p, cfg, m, taps);

  Mat g = dense(to_mat(taps.embeddings), p, "lst.down0");
  for (int i = 1; i <= 2; ++i) {
    const std::string s = std::to_string(i);
    const double mu = sigmoid((*p.at("lst.gate" + s).value)[0] / m.gate_temperature);
    g = adapter(mix(mu, dense(to_mat(taps.layer(i)), p, "lst.down" + s), g), p, "lst.block" + s + ".");
  }
  REQUIRE(got.rows() == 5);
  REQUIRE(got.cols() == 2);
  for (std::size_t k = 0; k < g.v.size(); ++k) CHECK(got.data()[k] == doctest::Approx(g.v[k]).epsilon(1e-12));
}

TEST_CASE("freshly initialized lst maps zero taps to zero") {
  const ModelConfig cfg = tiny(2, 4);
  ParamStore p;
  declare_lst(p, cfg, MethodSpec::lst(2));
  p.materialize(3);
  LayerTaps taps;
  taps.embeddings = Tensor({5, 4}, Buffer(20, 0.0));
  taps.per_layer = {taps.embeddings, taps.embeddings};
  Engine e;
  for (double v : values(lst_forward(e, p, cfg, MethodSpec::lst(2), taps))) CHECK(v == 0.0);
}

TEST_CASE("unipt interaction examples") {
  Engine e;
  const Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(values(unipt_interact(e, eye, eye)) == Buffer{2.0, 0.0, 0.0, 2.0});
  // negative similarities are cut, so A = 0 and the output is F_i itself
  const Tensor fi({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor fn({2, 2}, {-1.0, 0.0, 0.0, -1.0});
  CHECK(values(unipt_interact(e, fi, fn)) == Buffer{1.0, 2.0, 3.0, 4.0});
  // row 0 of F_N attends to both rows of F_i with weights 1/3, 2/3
  const Tensor f1({2, 1}, {1.0, 2.0});
  const Tensor f2({2, 1}, {1.0, 0.0});
  const Buffer got = values(unipt_interact(e, f1, f2));
  CHECK(got[0] == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  CHECK(got[1] == 2.0);
  CHECK_THROWS_AS(unipt_interact(e, f1, eye), ShapeError);
}

TEST_CASE("unipt aggregation weights") {
  const ModelConfig cfg = tiny(3, 2);
  ParamStore p;
  declare_unipt(p, cfg, MethodSpec::unipt(2));
  p.materialize(1);
  for (int i = 1; i <= 3; ++i) set(p, "unipt.proj" + std::to_string(i) + ".w", {1.0, 0.0});
  set(p, "unipt.conf.w", {1.0});
  Engine e;
  std::vector<Tensor> ints = {Tensor({3, 2}, Buffer(6, 20.0)), Tensor({3, 2}, Buffer(6, 0.0)),
                              Tensor({3, 2}, Buffer(6, 0.0))};
  // c = (20, 0, 0): the first layer takes nearly all the weight
  for (double v : values(unipt_aggregate(e, p, ints))) CHECK(v == doctest::Approx(20.0).epsilon(1e-7));

  set(p, "unipt.conf.w", {0.0});
  ints = {Tensor({3, 2}, Buffer(6, 3.0)), Tensor({3, 2}, Buffer(6, 6.0)), Tensor({3, 2}, Buffer(6, 0.0))};
  for (double v : values(unipt_aggregate(e, p, ints))) CHECK(v == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("sherl redundancy examples") {
  const auto rho = sherl_redundancy_pooled({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
  CHECK(rho == std::vector<double>{0.5, 0.5, 0.0});
  CHECK(sherl_redundancy_pooled({{2.0, 1.0}}) == std::vector<double>{0.0});
  CHECK(sherl_redundancy_pooled({{1.0, 0.0}, {-1.0, 0.0}}) == std::vector<double>{0.0, 0.0});
  Engine e;
  CHECK_THROWS_AS(sherl_redundancy(e, random_taps(2, 4, 3, 1), 2), ConfigError);
  CHECK_THROWS_AS(FineTuneModel(tiny(2, 4), MethodSpec::sherl(2), 1), ConfigError);
}

TEST_CASE("sherl matches a straight-line duplicate") {
  const ModelConfig cfg = tiny(3, 4);
  const MethodSpec m = MethodSpec::sherl(2);
  FineTuneModel model(cfg, m, 5);
  ParamStore& p = model.params();
  set(p, "sherl.gate", {0.05});
  set(p, "sherl.proj1.b", {0.3, -0.2});
  const LayerTaps taps = random_taps(2, 5, 4, 60);
  Engine e;
  const auto rho = sherl_redundancy(e, taps, 3);
  REQUIRE(rho.size() == 1);
  CHECK(rho[0] == 0.0);
  const Tensor got = sherl_forward(e, p, cfg, m, taps, rho);

  const Mat kv = scaled(relu(dense(to_mat(taps.layer(1)), p, "sherl.proj1")), 1.0 - rho[0]);
  const Mat guide = to_mat(taps.layer(2));
  const Mat early = matmul(softmax_attend(matmul(guide, from(p, "sherl.q.w")), kv, 1.0 / std::sqrt(2.0)),
                           from(p, "sherl.out.w"));
  const Mat want = block(mix(sigmoid(0.05 / m.gate_temperature), early, guide), p, cfg, 3);
  for (std::size_t k = 0; k < want.v.size(); ++k) CHECK(got.data()[k] == doctest::Approx(want.v[k]).epsilon(1e-12));
}

TEST_CASE("fully redundant shallow layers leave only the guide") {
  const ModelConfig cfg = tiny(4, 4);
  const MethodSpec m = MethodSpec::sherl(2);
  FineTuneModel model(cfg, m, 9);
  const LayerTaps taps = random_taps(3, 5, 4, 70);
  Engine e;
  const Tensor got = sherl_forward(e, model.params(), cfg, m, taps, {1.0, 1.0});
  const Mat want = block(scaled(to_mat(taps.layer(3)), 0.5), model.params(), cfg, 4);
  for (std::size_t k = 0; k < want.v.size(); ++k) CHECK(got.data()[k] == doctest::Approx(want.v[k]).epsilon(1e-12));
}

TEST_CASE("meft memory shrinks with the reduction factor and skips the backbone") {
  const ModelConfig cfg = ModelConfig::toy();
  auto peak = [&](const MethodSpec& m) { return measure_step(cfg, m, 1, Precision::F32); };
  const auto vanilla = peak(MethodSpec::vanilla());
  const auto l2 = peak(MethodSpec::lst(2)), l4 = peak(MethodSpec::lst(4)), l8 = peak(MethodSpec::lst(8));
  CHECK(l2.peak_retained_bytes > l4.peak_retained_bytes);
  CHECK(l4.peak_retained_bytes > l8.peak_retained_bytes);
  CHECK(peak(MethodSpec::unipt(2)).peak_retained_bytes > peak(MethodSpec::unipt(8)).peak_retained_bytes);
  CHECK(peak(MethodSpec::sherl(2)).peak_retained_bytes > peak(MethodSpec::sherl(8)).peak_retained_bytes);
  for (const auto& s : {l2, l4, l8, peak(MethodSpec::unipt(2))}) {
    CHECK(s.backbone_nodes == 0);
    CHECK(s.peak_retained_bytes < vanilla.peak_retained_bytes);
  }
  const auto sh = peak(MethodSpec::sherl(2));
  CHECK(sh.backbone_layers == std::set<int>{cfg.n_layers});
  CHECK(sh.peak_retained_bytes < vanilla.peak_retained_bytes);
}
