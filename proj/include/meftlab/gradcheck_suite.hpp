#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meftlab/gradcheck.hpp"

namespace meftlab {

struct SuiteCase {
  std::string name;
  GradcheckReport report;
};

/// Finite-difference checks for every primitive plus the adapter, LoRA,
/// gate, UniPT and SHERL forwards, all at f64 on small random operands.
std::vector<SuiteCase> run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts = {});

}  // namespace meftlab
