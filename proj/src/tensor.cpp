#include "meftlab/tensor.hpp"

namespace meftlab {

std::string Shape::str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Tensor::Tensor(Shape shape, Buffer data)
    : shape_(shape), data_(std::make_shared<const Buffer>(std::move(data))) {
  if (data_->size() != shape_.size()) {
    throw ShapeError("tensor of shape " + shape_.str() + " given " +
                     std::to_string(data_->size()) + " values");
  }
}

Tensor::Tensor(Shape shape, std::shared_ptr<const Buffer> data, std::optional<NodeId> node,
               bool param)
    : shape_(shape), data_(std::move(data)), node_(node), param_(param) {}

Tensor Tensor::zeros(Shape shape) { return Tensor(shape, Buffer(shape.size(), 0.0)); }

Tensor Tensor::filled(Shape shape, double value) {
  return Tensor(shape, Buffer(shape.size(), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, Buffer{value}); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Buffer data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return (*data_)[0];
}

Tensor Tensor::detached() const { return Tensor(shape_, data_, std::nullopt, param_); }

}  // namespace meftlab
