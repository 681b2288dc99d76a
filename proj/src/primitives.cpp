#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "meftlab/engine.hpp"
#include "meftlab/kernels.hpp"

namespace meftlab {

struct OpContext {
  Engine& engine;
  Op kind;
  std::span<const Tensor> in;
  std::vector<bool> needs;
  bool record;
  const OpAttrs& attrs;

  [[nodiscard]] std::size_t eb() const { return engine.element_bytes(); }
  [[nodiscard]] bool parallel() const { return engine.parallel_kernels(); }
  [[nodiscard]] bool activation(std::size_t i) const { return !in[i].is_param(); }
  [[nodiscard]] std::shared_ptr<const Buffer> finish(Buffer&& out) const {
    if (engine.precision() == Precision::F32) {
      for (double& v : out) v = static_cast<double>(static_cast<float>(v));
    }
    return std::make_shared<const Buffer>(std::move(out));
  }
};

namespace {

struct OpResult {
  OpResult(Shape s, std::shared_ptr<const Buffer> v) : shape(s), value(std::move(v)) {}
  Shape shape;
  std::shared_ptr<const Buffer> value;
  std::size_t retained_bytes{0};
  double flops{0.0};
  BackwardFn backward;
};

[[noreturn]] void shape_fail(const OpContext& c, const std::string& detail) {
  std::string msg = std::string(op_name(c.kind)) + ": " + detail + " (inputs:";
  for (const auto& t : c.in) msg += " " + t.shape().str();
  msg += ")";
  throw ShapeError(msg);
}

void expect_arity(const OpContext& c, std::size_t n) {
  if (c.in.size() != n) {
    shape_fail(c, "expected " + std::to_string(n) + " inputs, got " + std::to_string(c.in.size()));
  }
}

std::shared_ptr<const Buffer> buf(const Tensor& t) { return t.buffer(); }

// Broadcast of the second operand of add/mul onto the first.
enum class Bcast { Same, Row, Col, Scalar };

Bcast broadcast_kind(const OpContext& c) {
  const Shape a = c.in[0].shape();
  const Shape b = c.in[1].shape();
  if (a == b) return Bcast::Same;
  if (b.rows == 1 && b.cols == 1) return Bcast::Scalar;
  if (b.rows == 1 && b.cols == a.cols) return Bcast::Row;
  if (b.cols == 1 && b.rows == a.rows) return Bcast::Col;
  shape_fail(c, "second operand does not broadcast to the first");
}

inline std::size_t bidx(Bcast k, std::size_t i, std::size_t j, std::size_t cols) {
  switch (k) {
    case Bcast::Same: return i * cols + j;
    case Bcast::Row: return j;
    case Bcast::Col: return i;
    case Bcast::Scalar: return 0;
  }
  return 0;
}

void gemm(const OpContext& c, const kernels::GemmDims& d, std::span<const double> a,
          std::span<const double> b, std::span<double> out) {
  if (c.parallel()) {
    kernels::gemm_parallel(d, a, b, out);
  } else {
    kernels::gemm_serial(d, a, b, out);
  }
}

OpResult op_matmul(const OpContext& c) {
  expect_arity(c, 2);
  const Shape a = c.in[0].shape();
  const Shape b = c.in[1].shape();
  if (a.cols != b.rows) shape_fail(c, "inner extents differ");
  const std::size_t m = a.rows, k = a.cols, n = b.cols;
  Buffer out(m * n);
  const bool parallel = c.parallel();
  gemm(c, {m, n, k, false, false}, c.in[0].data(), c.in[1].data(), out);
  OpResult r{{m, n}, c.finish(std::move(out))};
  if (!c.record) return r;
  const bool ga = c.needs[0], gb = c.needs[1];
  if (gb && c.activation(0)) r.retained_bytes += a.size() * c.eb();
  if (ga && c.activation(1)) r.retained_bytes += b.size() * c.eb();
  r.flops = 2.0 * static_cast<double>(m * k * n) * ((ga ? 1 : 0) + (gb ? 1 : 0));
  r.backward = [ab = buf(c.in[0]), bb = buf(c.in[1]), m, n, k, ga, gb, parallel](
                   std::span<const double> g, std::span<const std::span<double>> gin) {
    auto run = parallel ? kernels::gemm_parallel : kernels::gemm_serial;
    if (ga) {
      Buffer tmp(m * k);
      run({m, k, n, false, true}, g, *bb, tmp);  // g * B^T
      for (std::size_t i = 0; i < tmp.size(); ++i) gin[0][i] += tmp[i];
    }
    if (gb) {
      Buffer tmp(k * n);
      run({k, n, m, true, false}, *ab, g, tmp);  // A^T * g
      for (std::size_t i = 0; i < tmp.size(); ++i) gin[1][i] += tmp[i];
    }
  };
  return r;
}

OpResult op_add(const OpContext& c) {
  expect_arity(c, 2);
  const Shape a = c.in[0].shape();
  const Bcast kind = broadcast_kind(c);
  const auto x = c.in[0].data();
  const auto y = c.in[1].data();
  Buffer out(a.size());
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      out[i * a.cols + j] = x[i * a.cols + j] + y[bidx(kind, i, j, a.cols)];
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  const bool ga = c.needs[0], gb = c.needs[1];
  r.flops = static_cast<double>(a.size()) * ((ga ? 1 : 0) + (gb ? 1 : 0));
  r.backward = [a, kind, ga, gb](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) {
        const double gv = g[i * a.cols + j];
        if (ga) gin[0][i * a.cols + j] += gv;
        if (gb) gin[1][bidx(kind, i, j, a.cols)] += gv;
      }
  };
  return r;
}

OpResult op_mul(const OpContext& c) {
  expect_arity(c, 2);
  const Shape a = c.in[0].shape();
  const Bcast kind = broadcast_kind(c);
  const auto x = c.in[0].data();
  const auto y = c.in[1].data();
  Buffer out(a.size());
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      out[i * a.cols + j] = x[i * a.cols + j] * y[bidx(kind, i, j, a.cols)];
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  const bool ga = c.needs[0], gb = c.needs[1];
  if (ga && c.activation(1)) r.retained_bytes += c.in[1].size() * c.eb();
  if (gb && c.activation(0)) r.retained_bytes += a.size() * c.eb();
  r.flops = static_cast<double>(a.size()) * ((ga ? 1 : 0) + (gb ? 1 : 0));
  r.backward = [a, kind, ga, gb, xb = buf(c.in[0]), yb = buf(c.in[1])](
                   std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) {
        const std::size_t ia = i * a.cols + j;
        const std::size_t ib = bidx(kind, i, j, a.cols);
        if (ga) gin[0][ia] += g[ia] * (*yb)[ib];
        if (gb) gin[1][ib] += g[ia] * (*xb)[ia];
      }
  };
  return r;
}

OpResult op_scale(const OpContext& c) {
  expect_arity(c, 1);
  const double s = c.attrs.scalar;
  Buffer out(c.in[0].data().begin(), c.in[0].data().end());
  for (double& v : out) v *= s;
  OpResult r{c.in[0].shape(), c.finish(std::move(out))};
  if (!c.record) return r;
  r.flops = static_cast<double>(c.in[0].size());
  r.backward = [s](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += s * g[i];
  };
  return r;
}

OpResult op_transpose(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  const auto x = c.in[0].data();
  Buffer out(a.size());
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out[j * a.rows + i] = x[i * a.cols + j];
  OpResult r{{a.cols, a.rows}, c.finish(std::move(out))};
  if (!c.record) return r;
  r.backward = [a](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) gin[0][i * a.cols + j] += g[j * a.rows + i];
  };
  return r;
}

OpResult op_reshape(const OpContext& c) {
  expect_arity(c, 1);
  const Shape target = c.attrs.shape;
  if (target.size() != c.in[0].size()) shape_fail(c, "reshape target " + target.str());
  OpResult r{target, c.in[0].buffer()};
  if (c.engine.precision() == Precision::F32) r.value = c.finish(Buffer(*c.in[0].buffer()));
  if (!c.record) return r;
  r.backward = [](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  };
  return r;
}

OpResult op_concat_rows(const OpContext& c) {
  if (c.in.empty()) shape_fail(c, "no inputs");
  const std::size_t cols = c.in[0].cols();
  std::size_t rows = 0;
  for (const auto& t : c.in) {
    if (t.cols() != cols) shape_fail(c, "column extents differ");
    rows += t.rows();
  }
  Buffer out;
  out.reserve(rows * cols);
  std::vector<std::size_t> offsets;
  for (const auto& t : c.in) {
    offsets.push_back(out.size());
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  OpResult r{{rows, cols}, c.finish(std::move(out))};
  if (!c.record) return r;
  r.backward = [offsets](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (gin[k].empty()) continue;
      for (std::size_t i = 0; i < gin[k].size(); ++i) gin[k][i] += g[offsets[k] + i];
    }
  };
  return r;
}

OpResult op_concat_cols(const OpContext& c) {
  if (c.in.empty()) shape_fail(c, "no inputs");
  const std::size_t rows = c.in[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> starts, widths;
  for (const auto& t : c.in) {
    if (t.rows() != rows) shape_fail(c, "row extents differ");
    starts.push_back(cols);
    widths.push_back(t.cols());
    cols += t.cols();
  }
  Buffer out(rows * cols);
  for (std::size_t k = 0; k < c.in.size(); ++k) {
    const auto x = c.in[k].data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(&x[i * widths[k]], widths[k], &out[i * cols + starts[k]]);
  }
  OpResult r{{rows, cols}, c.finish(std::move(out))};
  if (!c.record) return r;
  r.backward = [rows, cols, starts, widths](std::span<const double> g,
                                           std::span<const std::span<double>> gin) {
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (gin[k].empty()) continue;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j)
          gin[k][i * widths[k] + j] += g[i * cols + starts[k] + j];
    }
  };
  return r;
}

OpResult op_slice_cols(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  const std::size_t b = c.attrs.begin, e = c.attrs.end;
  if (b >= e || e > a.cols) {
    shape_fail(c, "bad column range [" + std::to_string(b) + ", " + std::to_string(e) + ")");
  }
  const std::size_t w = e - b;
  const auto x = c.in[0].data();
  Buffer out(a.rows * w);
  for (std::size_t i = 0; i < a.rows; ++i) std::copy_n(&x[i * a.cols + b], w, &out[i * w]);
  OpResult r{{a.rows, w}, c.finish(std::move(out))};
  if (!c.record) return r;
  r.backward = [a, b, w](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < w; ++j) gin[0][i * a.cols + b + j] += g[i * w + j];
  };
  return r;
}

OpResult op_shift_rows(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  const long s = c.attrs.shift;
  const auto x = c.in[0].data();
  Buffer out(a.size(), 0.0);
  const long rows = static_cast<long>(a.rows);
  for (long t = 0; t < rows; ++t) {
    const long src = t - s;
    if (src < 0 || src >= rows) continue;
    std::copy_n(&x[static_cast<std::size_t>(src) * a.cols], a.cols,
                &out[static_cast<std::size_t>(t) * a.cols]);
  }
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  r.backward = [a, s, rows](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (long t = 0; t < rows; ++t) {
      const long src = t - s;
      if (src < 0 || src >= rows) continue;
      for (std::size_t j = 0; j < a.cols; ++j)
        gin[0][static_cast<std::size_t>(src) * a.cols + j] += g[static_cast<std::size_t>(t) * a.cols + j];
    }
  };
  return r;
}

OpResult op_softmax_rows(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  Buffer out(a.size());
  if (c.parallel()) {
    kernels::softmax_rows_parallel(a.rows, a.cols, c.in[0].data(), out);
  } else {
    kernels::softmax_rows_serial(a.rows, a.cols, c.in[0].data(), out);
  }
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  r.retained_bytes = a.size() * c.eb();
  r.flops = 4.0 * static_cast<double>(a.size());
  r.backward = [a, y = r.value](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* yr = &(*y)[i * a.cols];
      const double* gr = &g[i * a.cols];
      double dot = 0.0;
      for (std::size_t j = 0; j < a.cols; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < a.cols; ++j) gin[0][i * a.cols + j] += yr[j] * (gr[j] - dot);
    }
  };
  return r;
}

OpResult op_layernorm(const OpContext& c) {
  expect_arity(c, 3);
  const Shape a = c.in[0].shape();
  if (c.in[1].shape() != Shape{1, a.cols} || c.in[2].shape() != Shape{1, a.cols}) {
    shape_fail(c, "gain and bias must be 1x" + std::to_string(a.cols));
  }
  Buffer out(a.size());
  auto xhat = std::make_shared<Buffer>(a.size());
  auto rstd = std::make_shared<Buffer>(a.rows);
  if (c.parallel()) {
    kernels::layernorm_rows_parallel(a.rows, a.cols, c.in[0].data(), c.in[1].data(),
                                     c.in[2].data(), c.attrs.eps, out, *xhat, *rstd);
  } else {
    kernels::layernorm_rows_serial(a.rows, a.cols, c.in[0].data(), c.in[1].data(), c.in[2].data(),
                                   c.attrs.eps, out, *xhat, *rstd);
  }
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  const bool gx = c.needs[0], gg = c.needs[1], gbeta = c.needs[2];
  r.retained_bytes = (a.size() + a.rows) * c.eb();
  r.flops = static_cast<double>(a.size()) * ((gx ? 8 : 0) + (gg ? 1 : 0) + (gbeta ? 1 : 0));
  r.backward = [a, xhat, rstd, gamma = buf(c.in[1]), gx, gg, gbeta](
                   std::span<const double> g, std::span<const std::span<double>> gin) {
    const double inv_n = 1.0 / static_cast<double>(a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* xh = &(*xhat)[i * a.cols];
      const double* gr = &g[i * a.cols];
      if (gx) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) {
          const double d = gr[j] * (*gamma)[j];
          mean_d += d;
          mean_dx += d * xh[j];
        }
        mean_d *= inv_n;
        mean_dx *= inv_n;
        for (std::size_t j = 0; j < a.cols; ++j) {
          const double d = gr[j] * (*gamma)[j];
          gin[0][i * a.cols + j] += (*rstd)[i] * (d - mean_d - xh[j] * mean_dx);
        }
      }
      for (std::size_t j = 0; j < a.cols; ++j) {
        if (gg) gin[1][j] += gr[j] * xh[j];
        if (gbeta) gin[2][j] += gr[j];
      }
    }
  };
  return r;
}

OpResult op_relu(const OpContext& c) {
  expect_arity(c, 1);
  const auto x = c.in[0].data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  OpResult r{c.in[0].shape(), c.finish(std::move(out))};
  if (!c.record) return r;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) (*mask)[i] = x[i] > 0.0 ? 1 : 0;
  r.retained_bytes = x.size();
  r.flops = static_cast<double>(x.size());
  r.backward = [mask](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*mask)[i]) gin[0][i] += g[i];
  };
  return r;
}

OpResult op_gelu(const OpContext& c) {
  expect_arity(c, 1);
  const auto x = c.in[0].data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
  OpResult r{c.in[0].shape(), c.finish(std::move(out))};
  if (!c.record) return r;
  r.retained_bytes = x.size() * c.eb();
  r.flops = 8.0 * static_cast<double>(x.size());
  r.backward = [xb = buf(c.in[0])](std::span<const double> g, std::span<const std::span<double>> gin) {
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = (*xb)[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gin[0][i] += g[i] * (cdf + v * pdf);
    }
  };
  return r;
}

OpResult op_sigmoid(const OpContext& c) {
  expect_arity(c, 1);
  const auto x = c.in[0].data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  OpResult r{c.in[0].shape(), c.finish(std::move(out))};
  if (!c.record) return r;
  r.retained_bytes = x.size() * c.eb();
  r.flops = 3.0 * static_cast<double>(x.size());
  r.backward = [y = r.value](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * (*y)[i] * (1.0 - (*y)[i]);
  };
  return r;
}

OpResult op_mean(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  const int axis = c.attrs.axis;
  if (axis != 0 && axis != 1) shape_fail(c, "axis must be 0 or 1");
  if (a.size() == 0) shape_fail(c, "empty input");
  const auto x = c.in[0].data();
  Shape s;
  Buffer out;
  if (axis == 0) {
    s = {1, a.cols};
    out.resize(a.cols);
    kernels::column_mean_compensated(a.rows, a.cols, x, out);
  } else {
    s = {a.rows, 1};
    out.resize(a.rows);
    Buffer row(1);
    for (std::size_t i = 0; i < a.rows; ++i) {
      kernels::column_mean_compensated(a.cols, 1, x.subspan(i * a.cols, a.cols), row);
      out[i] = row[0];
    }
  }
  OpResult r{s, c.finish(std::move(out))};
  if (!c.record) return r;
  r.flops = static_cast<double>(a.size());
  r.backward = [a, axis](std::span<const double> g, std::span<const std::span<double>> gin) {
    const double inv = 1.0 / static_cast<double>(axis == 0 ? a.rows : a.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j)
        gin[0][i * a.cols + j] += g[axis == 0 ? j : i] * inv;
  };
  return r;
}

OpResult op_embedding_add(const OpContext& c) {
  expect_arity(c, 2);
  const Shape a = c.in[0].shape();
  const Shape t = c.in[1].shape();
  if (t.cols != a.cols || t.rows < a.rows) shape_fail(c, "table does not cover the sequence");
  const auto x = c.in[0].data();
  const auto e = c.in[1].data();
  Buffer out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = x[i] + e[i];
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  const bool gx = c.needs[0], ge = c.needs[1];
  r.flops = static_cast<double>(a.size()) * ((gx ? 1 : 0) + (ge ? 1 : 0));
  r.backward = [gx, ge](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (gx) gin[0][i] += g[i];
      if (ge) gin[1][i] += g[i];
    }
  };
  return r;
}

OpResult op_cross_entropy(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  const auto& labels = c.attrs.labels;
  if (labels.size() != a.rows) shape_fail(c, "need one label per row");
  for (std::size_t lab : labels)
    if (lab >= a.cols) shape_fail(c, "label " + std::to_string(lab) + " out of range");
  auto probs = std::make_shared<Buffer>(a.size());
  kernels::softmax_rows_serial(a.rows, a.cols, c.in[0].data(), *probs);
  const auto x = c.in[0].data();
  double loss = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* row = &x[i * a.cols];
    const double mx = *std::max_element(row, row + a.cols);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += std::exp(row[j] - mx);
    loss += mx + std::log(s) - row[labels[i]];
  }
  loss /= static_cast<double>(a.rows);
  OpResult r{{1, 1}, c.finish(Buffer{loss})};
  if (!c.record) return r;
  r.retained_bytes = a.size() * c.eb();
  r.flops = 2.0 * static_cast<double>(a.size());
  r.backward = [a, probs, labels](std::span<const double> g, std::span<const std::span<double>> gin) {
    const double s = g[0] / static_cast<double>(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) {
        const double target = j == labels[i] ? 1.0 : 0.0;
        gin[0][i * a.cols + j] += s * ((*probs)[i * a.cols + j] - target);
      }
  };
  return r;
}

OpResult op_cosine_rows(const OpContext& c) {
  expect_arity(c, 2);
  const Shape a = c.in[0].shape();
  if (c.in[1].shape() != a) shape_fail(c, "operands differ in shape");
  const auto x = c.in[0].data();
  const auto y = c.in[1].data();
  // per row: dot, |x|, |y|
  auto stats = std::make_shared<Buffer>(3 * a.rows);
  Buffer out(a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double u = x[i * a.cols + j], v = y[i * a.cols + j];
      dot += u * v;
      nx += u * u;
      ny += v * v;
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    (*stats)[3 * i] = dot;
    (*stats)[3 * i + 1] = nx;
    (*stats)[3 * i + 2] = ny;
    out[i] = (nx > 0.0 && ny > 0.0) ? dot / (nx * ny) : 0.0;
  }
  OpResult r{{a.rows, 1}, c.finish(std::move(out))};
  if (!c.record) return r;
  r.retained_bytes = (2 * a.size() + 3 * a.rows) * c.eb();
  r.flops = 8.0 * static_cast<double>(a.size()) * ((c.needs[0] ? 1 : 0) + (c.needs[1] ? 1 : 0));
  r.backward = [a, stats, xb = buf(c.in[0]), yb = buf(c.in[1]), gx = c.needs[0], gy = c.needs[1]](
                   std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double dot = (*stats)[3 * i], nx = (*stats)[3 * i + 1], ny = (*stats)[3 * i + 2];
      if (nx == 0.0 || ny == 0.0) continue;
      const double cosv = dot / (nx * ny);
      for (std::size_t j = 0; j < a.cols; ++j) {
        const double u = (*xb)[i * a.cols + j], v = (*yb)[i * a.cols + j];
        if (gx) gin[0][i * a.cols + j] += g[i] * (v / (nx * ny) - cosv * u / (nx * nx));
        if (gy) gin[1][i * a.cols + j] += g[i] * (u / (nx * ny) - cosv * v / (ny * ny));
      }
    }
  };
  return r;
}

OpResult op_l1_normalize_rows(const OpContext& c) {
  expect_arity(c, 1);
  const Shape a = c.in[0].shape();
  const auto x = c.in[0].data();
  auto sums = std::make_shared<Buffer>(a.rows);
  Buffer out(a.size(), 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += std::abs(x[i * a.cols + j]);
    (*sums)[i] = s;
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < a.cols; ++j) out[i * a.cols + j] = x[i * a.cols + j] / s;
  }
  OpResult r{a, c.finish(std::move(out))};
  if (!c.record) return r;
  r.retained_bytes = (a.size() + a.rows) * c.eb();
  r.flops = 4.0 * static_cast<double>(a.size());
  r.backward = [a, sums, xb = buf(c.in[0])](std::span<const double> g,
                                            std::span<const std::span<double>> gin) {
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double s = (*sums)[i];
      if (s == 0.0) continue;
      double gx = 0.0;
      for (std::size_t j = 0; j < a.cols; ++j) gx += g[i * a.cols + j] * (*xb)[i * a.cols + j];
      for (std::size_t j = 0; j < a.cols; ++j) {
        const double v = (*xb)[i * a.cols + j];
        const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        gin[0][i * a.cols + j] += g[i * a.cols + j] / s - sign * gx / (s * s);
      }
    }
  };
  return r;
}

OpResult dispatch(const OpContext& c) {
  switch (c.kind) {
    case Op::MatMul: return op_matmul(c);
    case Op::Add: return op_add(c);
    case Op::Mul: return op_mul(c);
    case Op::Scale: return op_scale(c);
    case Op::Transpose: return op_transpose(c);
    case Op::Reshape: return op_reshape(c);
    case Op::ConcatRows: return op_concat_rows(c);
    case Op::ConcatCols: return op_concat_cols(c);
    case Op::SliceCols: return op_slice_cols(c);
    case Op::ShiftRows: return op_shift_rows(c);
    case Op::SoftmaxRows: return op_softmax_rows(c);
    case Op::LayerNorm: return op_layernorm(c);
    case Op::Relu: return op_relu(c);
    case Op::Gelu: return op_gelu(c);
    case Op::Sigmoid: return op_sigmoid(c);
    case Op::MeanOverAxis: return op_mean(c);
    case Op::EmbeddingAdd: return op_embedding_add(c);
    case Op::CrossEntropyWithLogits: return op_cross_entropy(c);
    case Op::CosineRows: return op_cosine_rows(c);
    case Op::L1NormalizeRows: return op_l1_normalize_rows(c);
    case Op::Leaf: break;
  }
  throw std::invalid_argument("unknown primitive kind " +
                              std::to_string(static_cast<int>(c.kind)));
}

}  // namespace

Tensor Engine::apply(Op kind, std::span<const Tensor> inputs, Owner owner, const OpAttrs& attrs) {
  std::vector<bool> needs(inputs.size());
  bool recording = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    needs[i] = retaining() && inputs[i].on_tape();
    recording = recording || needs[i];
  }
  OpContext ctx{*this, kind, inputs, std::move(needs), recording, attrs};
  OpResult res = dispatch(ctx);
  if (!recording) return Tensor(res.shape, std::move(res.value), std::nullopt, false);

  TapeNode node;
  node.op = kind;
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.on_tape() ? *t.node() : kNoNode);
  node.retained_bytes = res.retained_bytes;
  node.owner = owner;
  node.layer = layer_;
  node.shape = res.shape;
  node.backward_flops = res.flops;
  node.backward = std::move(res.backward);
  const NodeId id = record(std::move(node));
  return Tensor(res.shape, std::move(res.value), id, false);
}

}  // namespace meftlab
