#include "meftlab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace meftlab::kernels {
namespace {

// One output row of C. Shared by the serial and parallel drivers so both
// reduce in the same order.
inline void gemm_row(const GemmDims& d, std::size_t i, const double* a, const double* b,
                     double* c) {
  double* crow = c + i * d.n;
  std::fill(crow, crow + d.n, 0.0);
  if (!d.trans_b) {
    for (std::size_t p = 0; p < d.k; ++p) {
      const double aip = d.trans_a ? a[p * d.m + i] : a[i * d.k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < d.n; ++j) {
      const double* bj = b + j * d.k;
      double acc = 0.0;
      if (d.trans_a) {
        for (std::size_t p = 0; p < d.k; ++p) acc += a[p * d.m + i] * bj[p];
      } else {
        const double* arow = a + i * d.k;
        for (std::size_t p = 0; p < d.k; ++p) acc += arow[p] * bj[p];
      }
      crow[j] = acc;
    }
  }
}

inline void softmax_row(std::size_t cols, const double* in, double* out) {
  double mx = in[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

inline void layernorm_row(std::size_t cols, const double* in, const double* gamma,
                          const double* beta, double eps, double* out, double* xhat,
                          double* rstd) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += in[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double c = in[j] - mean;
    var += c * c;
  }
  var /= static_cast<double>(cols);
  const double r = 1.0 / std::sqrt(var + eps);
  *rstd = r;
  for (std::size_t j = 0; j < cols; ++j) {
    xhat[j] = (in[j] - mean) * r;
    out[j] = xhat[j] * gamma[j] + beta[j];
  }
}

}  // namespace

void gemm_serial(const GemmDims& dims, std::span<const double> a, std::span<const double> b,
                 std::span<double> c) {
  for (std::size_t i = 0; i < dims.m; ++i) gemm_row(dims, i, a.data(), b.data(), c.data());
}

void gemm_parallel(const GemmDims& dims, std::span<const double> a, std::span<const double> b,
                   std::span<double> c) {
  const auto m = static_cast<long>(dims.m);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (dims.m * dims.n * dims.k > 32768)
  for (long i = 0; i < m; ++i) gemm_row(dims, static_cast<std::size_t>(i), ap, bp, cp);
}

void softmax_rows_serial(std::size_t rows, std::size_t cols, std::span<const double> in,
                         std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) softmax_row(cols, &in[i * cols], &out[i * cols]);
}

void softmax_rows_parallel(std::size_t rows, std::size_t cols, std::span<const double> in,
                           std::span<double> out) {
  const auto r = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (long i = 0; i < r; ++i) {
    const auto row = static_cast<std::size_t>(i);
    softmax_row(cols, &in[row * cols], &out[row * cols]);
  }
}

void layernorm_rows_serial(std::size_t rows, std::size_t cols, std::span<const double> in,
                           std::span<const double> gamma, std::span<const double> beta, double eps,
                           std::span<double> out, std::span<double> xhat, std::span<double> rstd) {
  for (std::size_t i = 0; i < rows; ++i) {
    layernorm_row(cols, &in[i * cols], gamma.data(), beta.data(), eps, &out[i * cols],
                  &xhat[i * cols], &rstd[i]);
  }
}

void layernorm_rows_parallel(std::size_t rows, std::size_t cols, std::span<const double> in,
                             std::span<const double> gamma, std::span<const double> beta,
                             double eps, std::span<double> out, std::span<double> xhat,
                             std::span<double> rstd) {
  const auto r = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (long i = 0; i < r; ++i) {
    const auto row = static_cast<std::size_t>(i);
    layernorm_row(cols, &in[row * cols], gamma.data(), beta.data(), eps, &out[row * cols],
                  &xhat[row * cols], &rstd[row]);
  }
}

void column_mean_compensated(std::size_t rows, std::size_t cols, std::span<const double> in,
                             std::span<double> out) {
  for (std::size_t j = 0; j < cols; ++j) {
    double sum = 0.0;
    double comp = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double y = in[i * cols + j] - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    out[j] = sum / static_cast<double>(rows);
  }
}

}  // namespace meftlab::kernels
