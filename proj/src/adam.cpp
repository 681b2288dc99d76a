#include "meftlab/adam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meftlab {

Adam::Adam(const ParamStore& params, AdamSpec spec, Precision precision)
    : spec_(spec), precision_(precision) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.frozen ? 0 : e.shape.size(), 0.0);
    v_.emplace_back(e.frozen ? 0 : e.shape.size(), 0.0);
  }
}

void Adam::step(ParamStore& params, std::size_t t) {
  if (t < 1) throw std::invalid_argument("adam step index must be >= 1");
  auto& entries = params.entries();
  if (entries.size() != m_.size()) throw std::logic_error("adam: parameter set changed");
  const double c1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    ParamEntry& e = entries[k];
    if (!e.frozen) {
      Buffer& m = m_[k];
      Buffer& v = v_[k];
      if (m.size() != e.grad.size()) throw std::logic_error("adam: entry '" + e.name + "' was unfrozen after construction");
      Buffer& w = *e.value;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = e.grad[i];
        m[i] = spec_.beta1 * m[i] + (1.0 - spec_.beta1) * g;
        v[i] = spec_.beta2 * v[i] + (1.0 - spec_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= spec_.lr * mhat / (std::sqrt(vhat) + spec_.eps);
        if (precision_ == Precision::F32) w[i] = static_cast<double>(static_cast<float>(w[i]));
      }
    }
    std::fill(e.grad.begin(), e.grad.end(), 0.0);
  }
}

}  // namespace meftlab
