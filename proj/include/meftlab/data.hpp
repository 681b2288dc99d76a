#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "meftlab/tensor.hpp"

namespace meftlab {

struct Sample {
  Tensor x;  // seq_len x d_input
  std::size_t label{0};
};

struct Dataset {
  std::vector<Sample> items;
  int n_classes{0};

  [[nodiscard]] std::size_t size() const { return items.size(); }
};

/// Six-dialect stand-in. Class k drives the two channels of its signature
/// pair with one random +-1 carrier per token; every other channel is noise.
/// The carrier has zero mean, so the class shows up in the channel energy
/// x[t,c]^2 (and x[t,a] * x[t,b]) but not in any mean-pooled linear feature.
/// With the nonlinearity off the signature channels carry a constant +1.
struct SyntheticTaskSpec {
  int n_classes{6};
  int seq_len{64};
  int d_input{8};
  double noise_std{0.5};
  bool nonlinear{true};
  std::vector<std::pair<int, int>> signatures;  // empty = default_signatures()

  void validate() const;
  [[nodiscard]] std::vector<std::pair<int, int>> resolved_signatures() const;
};

/// Distinct channel pairs: (0,1),(2,3),.. then (0,2),(1,3),(4,6),.. and so on.
std::vector<std::pair<int, int>> default_signatures(int n_classes, int d_input);

/// Balanced (label = index mod K), deterministic for a fixed seed.
Dataset gen_synthetic(const SyntheticTaskSpec& spec, std::size_t count, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset eval;
};
/// Per class, the first 80% (rounded down, at least one) of its samples train.
Split split_stratified(const Dataset& data, double train_fraction = 0.8);

/// Malformed feature or label file; `offset` is the byte (or line) position.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  [[nodiscard]] std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// MFB1: "MFB1", u32 LE count, then per record u32 rows, u32 cols and
// rows*cols f32 LE values. Labels: text, one integer per line.
void write_mfb1(const std::string& path, const std::vector<Tensor>& records);
std::vector<Tensor> read_mfb1(const std::string& path);
void write_labels(const std::string& path, const std::vector<std::size_t>& labels);
std::vector<std::size_t> read_labels(const std::string& path);

/// Reads features + labels; rows are zero-padded or truncated to seq_len.
Dataset load_features(const std::string& feature_path, const std::string& label_path, int seq_len,
                      int d_input, int n_classes);

}  // namespace meftlab
