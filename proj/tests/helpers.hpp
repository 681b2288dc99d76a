#pragma once

#include <cmath>
#include <random>
#include <string>

#include "meftlab/ops.hpp"
#include "meftlab/param_store.hpp"

namespace testing {

using namespace meftlab;

inline Tensor random_tensor(Shape s, std::uint64_t seed, double std = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, std);
  Buffer b(s.size());
  for (double& v : b) v = d(rng);
  return Tensor(s, std::move(b));
}

inline ParamEntry& leaf(ParamStore& p, const std::string& name, Shape s, double std = 1.0,
                        Owner owner = Owner::Side) {
  return p.declare({name, s, Role::Weight, owner, InitSpec::normal(std)});
}

/// Overwrites a materialized entry.
inline void set(ParamStore& p, const std::string& name, const Buffer& values) {
  *p.at(name).value = values;
}

/// sum of all elements, built from mean primitives.
inline Tensor sum_all(Engine& e, const Tensor& x) {
  return ops::scale(e, ops::mean(e, ops::mean(e, x, 0), 1), static_cast<double>(x.size()));
}

inline Buffer values(const Tensor& t) { return Buffer(t.data().begin(), t.data().end()); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace testing
