#pragma once

#include <functional>
#include <string>
#include <vector>

#include "meftlab/param_store.hpp"

namespace meftlab {

struct GradcheckEntry {
  std::string name;
  double max_rel_err{0.0};
  bool skipped{false};
  std::string note;  // "no gradient, skipped" for frozen entries
};

struct GradcheckReport {
  double max_rel_err{0.0};
  double tol{0.0};
  bool pass{false};
  std::vector<GradcheckEntry> entries;
};

/// Builds the scalar loss from the store. Called once on the tape and then
/// twice per trainable element in a detached scope.
using LossClosure = std::function<Tensor(Engine&, ParamStore&)>;

struct GradcheckOptions {
  double eps{1e-6};
  double tol{1e-5};
  // rel err = |tape - fd| / max(floor, |tape|, |fd|); the floor keeps
  // central-difference roundoff on near-zero gradients from dominating.
  double floor{1e-3};
};

/// Compares tape gradients with central differences for every trainable
/// entry. Requires an f64 engine; throws std::runtime_error on a non-finite loss.
GradcheckReport finite_diff_check(Engine& engine, ParamStore& params, const LossClosure& loss,
                                  const GradcheckOptions& opts = {});

}  // namespace meftlab
