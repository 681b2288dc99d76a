#pragma once

#include <vector>

#include "meftlab/param_store.hpp"

namespace meftlab {

struct AdamSpec {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

/// Bias-corrected Adam over the non-frozen entries of one store.
class Adam {
 public:
  Adam(const ParamStore& params, AdamSpec spec, Precision precision = Precision::F64);

  /// Applies update number t (t >= 1) and zeroes every gradient.
  void step(ParamStore& params, std::size_t t);
  [[nodiscard]] const AdamSpec& spec() const { return spec_; }

 private:
  AdamSpec spec_;
  Precision precision_;
  std::vector<Buffer> m_;
  std::vector<Buffer> v_;
};

}  // namespace meftlab
