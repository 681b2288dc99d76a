#include "meftlab/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace meftlab {

std::uint64_t param_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  // splitmix64 finalizer over the combined value
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ParamEntry& ParamStore::declare(ParamEntry entry) {
  if (entry.name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (contains(entry.name)) throw std::invalid_argument("duplicate parameter name '" + entry.name + "'");
  if (entry.shape.size() == 0) throw ShapeError("parameter '" + entry.name + "' has no elements");
  index_.emplace(entry.name, entries_.size());
  entries_.push_back(std::move(entry));
  materialized_ = false;
  return entries_.back();
}

void ParamStore::materialize(std::uint64_t seed) {
  for (auto& e : entries_) {
    Buffer v(e.shape.size(), 0.0);
    switch (e.init.kind) {
      case InitSpec::Zeros: break;
      case InitSpec::Ones: std::fill(v.begin(), v.end(), 1.0); break;
      case InitSpec::Normal:
      case InitSpec::ScaledNormal: {
        const double s = e.init.kind == InitSpec::Normal
                             ? e.init.std
                             : 1.0 / std::sqrt(static_cast<double>(e.shape.rows));
        std::mt19937_64 rng(param_seed(seed, e.name));
        std::normal_distribution<double> dist(0.0, s);
        for (double& x : v) x = dist(rng);
        break;
      }
    }
    e.value = std::make_shared<Buffer>(std::move(v));
    e.grad.assign(e.shape.size(), 0.0);
  }
  materialized_ = true;
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second];
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second];
}

Tensor ParamStore::use(Engine& engine, const std::string& name) {
  ParamEntry& e = at(name);
  if (!e.value) throw std::logic_error("parameter '" + name + "' used before materialize()");
  return engine.parameter(e.value, e.shape, &e.grad, !e.frozen, e.owner);
}

std::size_t ParamStore::total_params() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.shape.size();
  return n;
}

std::size_t ParamStore::trainable_params() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (!e.frozen) n += e.shape.size();
  return n;
}

double ParamStore::trainable_ratio_pct() const {
  const std::size_t total = total_params();
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(trainable_params()) / static_cast<double>(total);
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

void ParamStore::freeze_all(bool frozen) {
  for (auto& e : entries_) e.frozen = frozen;
}

void ParamStore::set_frozen_if(const std::function<bool(const ParamEntry&)>& pred, bool frozen) {
  for (auto& e : entries_)
    if (pred(e)) e.frozen = frozen;
}

}  // namespace meftlab
