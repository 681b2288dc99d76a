#include "meftlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meftlab {
namespace {

double eval_detached(Engine& engine, ParamStore& params, const LossClosure& loss) {
  Engine::DetachedScope scope(engine);
  const double v = loss(engine, params).item();
  if (!std::isfinite(v)) throw std::runtime_error("gradcheck: non-finite loss");
  return v;
}

}  // namespace

GradcheckReport finite_diff_check(Engine& engine, ParamStore& params, const LossClosure& loss,
                                  const GradcheckOptions& opts) {
  if (engine.precision() != Precision::F64) {
    throw std::invalid_argument("gradcheck requires an f64 engine");
  }
  if (!(opts.eps > 0.0)) throw std::invalid_argument("gradcheck: eps must be positive");

  params.zero_grads();
  engine.clear_tape();
  const Tensor l = loss(engine, params);
  if (!std::isfinite(l.item())) throw std::runtime_error("gradcheck: non-finite loss");
  if (l.on_tape()) engine.backward(l);

  GradcheckReport report;
  report.tol = opts.tol;
  for (auto& e : params.entries()) {
    GradcheckEntry row;
    row.name = e.name;
    if (e.frozen) {
      row.skipped = true;
      row.note = "no gradient, skipped";
      report.entries.push_back(row);
      continue;
    }
    Buffer& v = *e.value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + opts.eps;
      const double up = eval_detached(engine, params, loss);
      v[i] = saved - opts.eps;
      const double down = eval_detached(engine, params, loss);
      v[i] = saved;
      const double fd = (up - down) / (2.0 * opts.eps);
      const double tape = e.grad[i];
      const double denom = std::max({opts.floor, std::abs(tape), std::abs(fd)});
      row.max_rel_err = std::max(row.max_rel_err, std::abs(tape - fd) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, row.max_rel_err);
    report.entries.push_back(row);
  }
  report.pass = report.max_rel_err < opts.tol;
  params.zero_grads();
  return report;
}

}  // namespace meftlab
