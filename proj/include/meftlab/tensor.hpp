#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace meftlab {

/// Thrown when operand extents do not conform to an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major matrix extents. Vectors are 1 x n, scalars 1 x 1.
struct Shape {
  std::size_t rows{0};
  std::size_t cols{0};

  [[nodiscard]] constexpr std::size_t size() const { return rows * cols; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
  [[nodiscard]] std::string str() const;
};

using NodeId = std::uint32_t;
using Buffer = std::vector<double>;

/// Immutable dense tensor. Copies share the underlying buffer; a tensor
/// without a node id takes no part in any backward pass.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rows() const { return shape_.rows; }
  [[nodiscard]] std::size_t cols() const { return shape_.cols; }
  [[nodiscard]] std::size_t size() const { return shape_.size(); }
  [[nodiscard]] std::span<const double> data() const;
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data()[r * shape_.cols + c]; }
  [[nodiscard]] double item() const;

  [[nodiscard]] std::optional<NodeId> node() const { return node_; }
  [[nodiscard]] bool on_tape() const { return node_.has_value(); }
  /// True when the buffer is a parameter owned by a ParamStore. Parameter
  /// buffers are never counted as retained activations.
  [[nodiscard]] bool is_param() const { return param_; }
  [[nodiscard]] const std::shared_ptr<const Buffer>& buffer() const { return data_; }

  /// Same values, no tape handle.
  [[nodiscard]] Tensor detached() const;

 private:
  friend class Engine;
  Tensor(Shape shape, std::shared_ptr<const Buffer> data, std::optional<NodeId> node, bool param);

  Shape shape_{};
  std::shared_ptr<const Buffer> data_;
  std::optional<NodeId> node_;
  bool param_{false};
};

}  // namespace meftlab
