#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "meftlab/config.hpp"
#include "meftlab/param_store.hpp"

// Straight-line re-implementations on plain row-major vectors.
namespace oracle {

using meftlab::ModelConfig;
using meftlab::ParamStore;
using meftlab::ParamEntry;

struct Mat {
  std::size_t r{0}, c{0};
  std::vector<double> v;
  Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), v(rows * cols, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

inline Mat from(const ParamStore& p, const std::string& name) {
  const ParamEntry& e = p.at(name);
  Mat m(e.shape.rows, e.shape.cols);
  m.v = *e.value;
  return m;
}

inline Mat dense(const Mat& x, const ParamStore& p, const std::string& name) {
  const Mat w = from(p, name + ".w");
  const Mat b = from(p, name + ".b");
  Mat y(x.r, w.c);
  for (std::size_t i = 0; i < x.r; ++i)
    for (std::size_t j = 0; j < w.c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.c; ++k) s += x(i, k) * w(k, j);
      y(i, j) = s + b(0, j);
    }
  return y;
}

inline Mat gelu(Mat x) {
  for (double& t : x.v) t = 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0)));
  return x;
}

inline Mat layer_norm(const Mat& x, const ParamStore& p, const std::string& name, double eps) {
  const Mat g = from(p, name + ".g");
  const Mat b = from(p, name + ".b");
  Mat y(x.r, x.c);
  for (std::size_t i = 0; i < x.r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < x.c; ++j) mu += x(i, j);
    mu /= static_cast<double>(x.c);
    double var = 0.0;
    for (std::size_t j = 0; j < x.c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(x.c);
    for (std::size_t j = 0; j < x.c; ++j) y(i, j) = (x(i, j) - mu) / std::sqrt(var + eps) * g(0, j) + b(0, j);
  }
  return y;
}

inline Mat conv3(const Mat& x, const ParamStore& p, const std::string& name) {
  Mat cols(x.r, 3 * x.c);
  for (std::size_t t = 0; t < x.r; ++t)
    for (std::size_t j = 0; j < x.c; ++j) {
      cols(t, j) = t > 0 ? x(t - 1, j) : 0.0;
      cols(t, x.c + j) = x(t, j);
      cols(t, 2 * x.c + j) = t + 1 < x.r ? x(t + 1, j) : 0.0;
    }
  return dense(cols, p, name);
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

inline Mat block(const Mat& x, const ParamStore& p, const ModelConfig& cfg, int layer) {
  const std::string pre = "layer" + std::to_string(layer) + ".";
  const Mat h = layer_norm(x, p, pre + "ln1", cfg.ln_eps);
  const Mat q = dense(h, p, pre + "attn.q"), k = dense(h, p, pre + "attn.k"), v = dense(h, p, pre + "attn.v");
  const std::size_t dh = static_cast<std::size_t>(cfg.d_head());
  Mat heads(x.r, x.c);
  for (std::size_t hd = 0; hd < static_cast<std::size_t>(cfg.n_heads); ++hd) {
    for (std::size_t t = 0; t < x.r; ++t) {
      std::vector<double> s(x.r);
      double mx = -1e300;
      for (std::size_t u = 0; u < x.r; ++u) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) dot += q(t, hd * dh + j) * k(u, hd * dh + j);
        s[u] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[u]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < dh; ++j) {
        double acc = 0.0;
        for (std::size_t u = 0; u < x.r; ++u) acc += s[u] / z * v(u, hd * dh + j);
        heads(t, hd * dh + j) = acc;
      }
    }
  }
  const Mat y = add(x, dense(heads, p, pre + "attn.o"));
  const Mat ff = dense(gelu(dense(layer_norm(y, p, pre + "ln2", cfg.ln_eps), p, pre + "fc1")), p, pre + "fc2");
  return add(y, ff);
}

}  // namespace oracle
