#include "meftlab/peft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meftlab/backbone.hpp"
#include "meftlab/config.hpp"
#include "meftlab/ops.hpp"

namespace meftlab {
namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

Tensor sum_all(Engine& e, const Tensor& x) {
  return ops::scale(e, ops::mean(e, ops::mean(e, x, 0), 1), static_cast<double>(x.size()));
}

// |M - I|_F^2 for square M.
Tensor identity_gap(Engine& e, const Tensor& m) {
  Buffer eye(m.size(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) eye[i * m.cols() + i] = -1.0;
  const Tensor diff = ops::add(e, m, Tensor(m.shape(), std::move(eye)));
  return sum_all(e, ops::mul(e, diff, diff));
}

}  // namespace

void declare_adapter(ParamStore& params, const std::string& prefix, int d, int dim, Owner owner,
                     int layer) {
  if (dim < 1) throw ConfigError("adapter dim must be >= 1");
  params.declare({prefix + "ln.g", {1, sz(d)}, Role::Gain, owner, InitSpec::ones(), layer, false, true});
  params.declare({prefix + "ln.b", {1, sz(d)}, Role::Bias, owner, InitSpec::zeros(), layer, false, true});
  params.declare({prefix + "down.w", {sz(d), sz(dim)}, Role::Weight, owner, InitSpec::scaled(), layer,
                  false, true});
  params.declare({prefix + "down.b", {1, sz(dim)}, Role::Bias, owner, InitSpec::zeros(), layer, false, true});
  params.declare({prefix + "up.w", {sz(dim), sz(d)}, Role::Weight, owner, InitSpec::zeros(), layer,
                  false, true});
  params.declare({prefix + "up.b", {1, sz(d)}, Role::Bias, owner, InitSpec::zeros(), layer, false, true});
}

Tensor adapter_forward(Engine& engine, ParamStore& params, const std::string& prefix,
                       const Tensor& x, double eps) {
  const Tensor h = ops::layernorm(engine, x, params.use(engine, prefix + "ln.g"),
                                  params.use(engine, prefix + "ln.b"), eps);
  const Tensor db = params.use(engine, prefix + "down.b");
  const Tensor ub = params.use(engine, prefix + "up.b");
  const Tensor down = ops::relu(engine, ops::linear(engine, h, params.use(engine, prefix + "down.w"), &db));
  return ops::add(engine, x, ops::linear(engine, down, params.use(engine, prefix + "up.w"), &ub));
}

void declare_lora(ParamStore& params, const std::string& prefix, int d_in, int d_out, int r,
                  int layer) {
  if (r < 1) throw ConfigError("lora rank must be >= 1, got " + std::to_string(r));
  params.declare({prefix + "A", {sz(d_in), sz(r)}, Role::Weight, Owner::Side, InitSpec::scaled(), layer,
                  false, true});
  params.declare({prefix + "B", {sz(r), sz(d_out)}, Role::Weight, Owner::Side, InitSpec::zeros(), layer,
                  false, true});
}

Tensor lora_forward(Engine& engine, const Tensor& x, const Tensor& w, const Tensor& b,
                    const Tensor& a, const Tensor& bm, double scaling) {
  if (a.cols() < 1) throw ConfigError("lora rank must be >= 1");
  const Tensor base = ops::linear(engine, x, w, &b);
  Tensor delta = ops::matmul(engine, ops::matmul(engine, x, a), bm);
  if (scaling != 1.0) delta = ops::scale(engine, delta, scaling);
  return ops::add(engine, base, delta);
}

void declare_adalora(ParamStore& params, const std::string& prefix, int d_in, int d_out, int r,
                     int layer) {
  if (r < 1) throw ConfigError("adalora rank must be >= 1, got " + std::to_string(r));
  params.declare({prefix + "P", {sz(d_in), sz(r)}, Role::Weight, Owner::Side, InitSpec::scaled(), layer,
                  false, true});
  params.declare({prefix + "lambda", {1, sz(r)}, Role::Scalar, Owner::Side, InitSpec::zeros(), layer,
                  false, true});
  params.declare({prefix + "Q", {sz(r), sz(d_out)}, Role::Weight, Owner::Side, InitSpec::scaled(), layer,
                  false, true});
}

Tensor adalora_forward(Engine& engine, const Tensor& x, const Tensor& w, const Tensor& b,
                       const Tensor& p, const Tensor& lambda, const Tensor& q, double scaling) {
  const Tensor base = ops::linear(engine, x, w, &b);
  const Tensor xp = ops::mul(engine, ops::matmul(engine, x, p), lambda);
  Tensor delta = ops::matmul(engine, xp, q);
  if (scaling != 1.0) delta = ops::scale(engine, delta, scaling);
  return ops::add(engine, base, delta);
}

AdaLoraController::AdaLoraController(std::vector<std::string> prefixes, int init_r,
                                     std::size_t total_steps, std::size_t mask_interval)
    : prefixes_(std::move(prefixes)),
      init_r_(init_r),
      total_steps_(total_steps),
      mask_interval_(std::max<std::size_t>(1, mask_interval)),
      importance_(prefixes_.size() * sz(init_r), 0.0),
      active_(prefixes_.size() * sz(init_r), true) {
  if (init_r < 1) throw ConfigError("adalora init_r must be >= 1");
}

int AdaLoraController::schedule(int init_r, std::size_t step, std::size_t total_steps) {
  const int final_r = std::max(1, init_r / 2);
  const double t_final = 0.6 * static_cast<double>(total_steps);
  const double t = static_cast<double>(step);
  if (t >= t_final) return final_r;
  const double frac = 1.0 - t / t_final;
  return final_r + static_cast<int>(std::floor((init_r - final_r) * frac * frac * frac));
}

std::size_t AdaLoraController::budget(std::size_t step) const {
  return prefixes_.size() * sz(schedule(init_r_, step, total_steps_));
}

void AdaLoraController::update_importance(const ParamStore& params) {
  const std::size_t r = sz(init_r_);
  for (std::size_t m = 0; m < prefixes_.size(); ++m) {
    const ParamEntry& lam = params.at(prefixes_[m] + "lambda");
    for (std::size_t i = 0; i < r; ++i) {
      double& s = importance_[m * r + i];
      s = kBeta * s + (1.0 - kBeta) * std::abs((*lam.value)[i] * lam.grad[i]);
    }
  }
}

void AdaLoraController::apply_mask(ParamStore& params, std::size_t step) {
  const std::size_t k = std::min(budget(step), importance_.size());
  std::vector<std::size_t> order(importance_.size());
  std::iota(order.begin(), order.end(), 0);
  // most important first, lower index wins ties
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return importance_[a] > importance_[b]; });
  if (step % mask_interval_ == 0) {
    std::fill(active_.begin(), active_.end(), false);
    for (std::size_t i = 0; i < k; ++i) active_[order[i]] = true;
  } else {
    std::size_t n = active();
    for (auto it = order.rbegin(); it != order.rend() && n > k; ++it) {
      if (active_[*it]) {
        active_[*it] = false;
        --n;
      }
    }
  }
  enforce(params);
}

void AdaLoraController::enforce(ParamStore& params) const {
  const std::size_t r = sz(init_r_);
  for (std::size_t m = 0; m < prefixes_.size(); ++m) {
    Buffer& lam = *params.at(prefixes_[m] + "lambda").value;
    for (std::size_t i = 0; i < r; ++i)
      if (!active_[m * r + i]) lam[i] = 0.0;
  }
}

Tensor AdaLoraController::orthogonality_penalty(Engine& engine, ParamStore& params) const {
  Engine::Tag tag(engine, Owner::Side, -1);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& prefix : prefixes_) {
    const Tensor p = params.use(engine, prefix + "P");
    const Tensor q = params.use(engine, prefix + "Q");
    total = ops::add(engine, total, identity_gap(engine, ops::matmul(engine, ops::transpose(engine, p), p)));
    total = ops::add(engine, total, identity_gap(engine, ops::matmul(engine, q, ops::transpose(engine, q))));
  }
  return ops::scale(engine, total, kOrthoWeight);
}

std::size_t AdaLoraController::active() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
}

void bitfit_select(ParamStore& params) { freeze_policy(params, MethodSpec::bitfit()); }

}  // namespace meftlab
