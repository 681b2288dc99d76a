// Serial reference vs OpenMP kernels: wall time and bitwise agreement.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "meftlab/kernels.hpp"

namespace k = meftlab::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double time_ms(const std::function<void()>& f, int reps) {
  f();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-28s %10.3f %10.3f %8.2fx  %s\n", name, serial, parallel, serial / parallel,
              same ? "bitwise-equal" : "DIFFERENT");
}

bool equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");
  bool ok = true;

  for (std::size_t n : {64, 256, 512}) {
    const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<double> c1(n * n), c2(n * n);
    const k::GemmDims dims{n, n, n, false, false};
    const double s = time_ms([&] { k::gemm_serial(dims, a, b, c1); }, reps);
    const double p = time_ms([&] { k::gemm_parallel(dims, a, b, c2); }, reps);
    char name[64];
    std::snprintf(name, sizeof name, "gemm %zux%zux%zu", n, n, n);
    row(name, s, p, equal(c1, c2));
    ok = ok && equal(c1, c2);
  }
  {
    const std::size_t r = 1500, c = 768;
    const auto x = random_vec(r * c, 3);
    std::vector<double> o1(r * c), o2(r * c);
    const double s = time_ms([&] { k::softmax_rows_serial(r, c, x, o1); }, reps);
    const double p = time_ms([&] { k::softmax_rows_parallel(r, c, x, o2); }, reps);
    row("softmax 1500x768", s, p, equal(o1, o2));
    ok = ok && equal(o1, o2);

    const auto g = random_vec(c, 4), be = random_vec(c, 5);
    std::vector<double> y1(r * c), y2(r * c), h1(r * c), h2(r * c), s1(r), s2(r);
    const double ls = time_ms([&] { k::layernorm_rows_serial(r, c, x, g, be, 1e-5, y1, h1, s1); }, reps);
    const double lp = time_ms([&] { k::layernorm_rows_parallel(r, c, x, g, be, 1e-5, y2, h2, s2); }, reps);
    const bool same = equal(y1, y2) && equal(h1, h2) && equal(s1, s2);
    row("layernorm 1500x768", ls, lp, same);
    ok = ok && same;
  }
  return ok ? 0 : 1;
}
