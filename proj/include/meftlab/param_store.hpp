#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "meftlab/engine.hpp"

namespace meftlab {

enum class Role { Weight, Bias, Gain, Embedding, Scalar };

struct InitSpec {
  enum Kind { Normal, ScaledNormal, Zeros, Ones } kind{Zeros};
  double std{0.0};  // Normal only; ScaledNormal uses 1/sqrt(rows)

  static InitSpec normal(double s) { return {Normal, s}; }
  static InitSpec scaled() { return {ScaledNormal, 0.0}; }
  static InitSpec zeros() { return {Zeros, 0.0}; }
  static InitSpec ones() { return {Ones, 0.0}; }
};

struct ParamEntry {
  std::string name;
  Shape shape;
  Role role{Role::Weight};
  Owner owner{Owner::Backbone};
  InitSpec init;
  int layer{-1};          // encoder layer, 0 for the front-end
  bool frontend{false};   // conv stem and position embedding
  bool method{false};     // added by a PEFT/MEFT method rather than the backbone
  bool frozen{false};
  std::shared_ptr<Buffer> value;  // null until materialized
  Buffer grad;
};

/// Named parameters in declaration order. Entries can be declared (for
/// counting) without allocating storage; materialize() fills every value
/// from a per-name seed so adding a parameter never perturbs the others.
class ParamStore {
 public:
  ParamEntry& declare(ParamEntry entry);
  void materialize(std::uint64_t seed);
  [[nodiscard]] bool materialized() const { return materialized_; }

  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamEntry& at(const std::string& name);
  [[nodiscard]] const ParamEntry& at(const std::string& name) const;
  [[nodiscard]] std::vector<ParamEntry>& entries() { return entries_; }
  [[nodiscard]] const std::vector<ParamEntry>& entries() const { return entries_; }

  /// Parameter tensor for use in a forward pass: a tape leaf when trainable.
  Tensor use(Engine& engine, const std::string& name);

  [[nodiscard]] std::size_t total_params() const;
  [[nodiscard]] std::size_t trainable_params() const;
  [[nodiscard]] double trainable_ratio_pct() const;

  void zero_grads();
  void freeze_all(bool frozen);
  void set_frozen_if(const std::function<bool(const ParamEntry&)>& pred, bool frozen);

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  bool materialized_{false};
};

/// Deterministic 64-bit seed for the parameter called `name`.
std::uint64_t param_seed(std::uint64_t seed, const std::string& name);

}  // namespace meftlab
