#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels. Every kernel has a serial reference and an OpenMP
// variant; the OpenMP variant only splits the outer (row) loop, so each output
// element is reduced in exactly the same order and the two are bitwise equal.
namespace meftlab::kernels {

struct GemmDims {
  std::size_t m{0};  // rows of op(A) and C
  std::size_t n{0};  // cols of op(B) and C
  std::size_t k{0};  // inner extent
  bool trans_a{false};
  bool trans_b{false};
};

// C = op(A) * op(B). C is overwritten.
void gemm_serial(const GemmDims& dims, std::span<const double> a, std::span<const double> b,
                 std::span<double> c);
void gemm_parallel(const GemmDims& dims, std::span<const double> a, std::span<const double> b,
                   std::span<double> c);

void softmax_rows_serial(std::size_t rows, std::size_t cols, std::span<const double> in,
                         std::span<double> out);
void softmax_rows_parallel(std::size_t rows, std::size_t cols, std::span<const double> in,
                           std::span<double> out);

// xhat and rstd are written for the backward pass; rstd has one entry per row.
void layernorm_rows_serial(std::size_t rows, std::size_t cols, std::span<const double> in,
                           std::span<const double> gamma, std::span<const double> beta, double eps,
                           std::span<double> out, std::span<double> xhat, std::span<double> rstd);
void layernorm_rows_parallel(std::size_t rows, std::size_t cols, std::span<const double> in,
                             std::span<const double> gamma, std::span<const double> beta,
                             double eps, std::span<double> out, std::span<double> xhat,
                             std::span<double> rstd);

// Column means with Kahan compensation (one output per column).
void column_mean_compensated(std::size_t rows, std::size_t cols, std::span<const double> in,
                             std::span<double> out);

}  // namespace meftlab::kernels
