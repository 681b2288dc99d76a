#pragma once

#include <array>
#include <vector>

#include "meftlab/engine.hpp"

// Thin wrappers over Engine::apply using the engine's current owner tag.
namespace meftlab::ops {

inline Tensor unary(Engine& e, Op op, const Tensor& x, const OpAttrs& attrs = {}) {
  std::array<Tensor, 1> in{x};
  return e.apply(op, in, attrs);
}

inline Tensor binary(Engine& e, Op op, const Tensor& a, const Tensor& b, const OpAttrs& attrs = {}) {
  std::array<Tensor, 2> in{a, b};
  return e.apply(op, in, attrs);
}

inline Tensor matmul(Engine& e, const Tensor& a, const Tensor& b) { return binary(e, Op::MatMul, a, b); }
inline Tensor add(Engine& e, const Tensor& a, const Tensor& b) { return binary(e, Op::Add, a, b); }
inline Tensor mul(Engine& e, const Tensor& a, const Tensor& b) { return binary(e, Op::Mul, a, b); }
inline Tensor transpose(Engine& e, const Tensor& x) { return unary(e, Op::Transpose, x); }
inline Tensor softmax_rows(Engine& e, const Tensor& x) { return unary(e, Op::SoftmaxRows, x); }
inline Tensor relu(Engine& e, const Tensor& x) { return unary(e, Op::Relu, x); }
inline Tensor gelu(Engine& e, const Tensor& x) { return unary(e, Op::Gelu, x); }
inline Tensor sigmoid(Engine& e, const Tensor& x) { return unary(e, Op::Sigmoid, x); }
inline Tensor l1_normalize_rows(Engine& e, const Tensor& x) { return unary(e, Op::L1NormalizeRows, x); }
inline Tensor cosine_rows(Engine& e, const Tensor& a, const Tensor& b) {
  return binary(e, Op::CosineRows, a, b);
}
inline Tensor embedding_add(Engine& e, const Tensor& x, const Tensor& table) {
  return binary(e, Op::EmbeddingAdd, x, table);
}

inline Tensor scale(Engine& e, const Tensor& x, double s) {
  OpAttrs a;
  a.scalar = s;
  return unary(e, Op::Scale, x, a);
}

inline Tensor reshape(Engine& e, const Tensor& x, Shape shape) {
  OpAttrs a;
  a.shape = shape;
  return unary(e, Op::Reshape, x, a);
}

inline Tensor slice_cols(Engine& e, const Tensor& x, std::size_t begin, std::size_t end) {
  OpAttrs a;
  a.begin = begin;
  a.end = end;
  return unary(e, Op::SliceCols, x, a);
}

inline Tensor shift_rows(Engine& e, const Tensor& x, long shift) {
  OpAttrs a;
  a.shift = shift;
  return unary(e, Op::ShiftRows, x, a);
}

inline Tensor mean(Engine& e, const Tensor& x, int axis) {
  OpAttrs a;
  a.axis = axis;
  return unary(e, Op::MeanOverAxis, x, a);
}

inline Tensor layernorm(Engine& e, const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps = 1e-5) {
  OpAttrs a;
  a.eps = eps;
  std::array<Tensor, 3> in{x, gain, bias};
  return e.apply(Op::LayerNorm, in, a);
}

inline Tensor cross_entropy(Engine& e, const Tensor& logits, std::vector<std::size_t> labels) {
  OpAttrs a;
  a.labels = std::move(labels);
  return unary(e, Op::CrossEntropyWithLogits, logits, a);
}

inline Tensor concat_rows(Engine& e, const std::vector<Tensor>& parts) {
  return e.apply(Op::ConcatRows, parts);
}
inline Tensor concat_cols(Engine& e, const std::vector<Tensor>& parts) {
  return e.apply(Op::ConcatCols, parts);
}

/// x * W (+ b), W stored input-major (d_in x d_out), b is 1 x d_out.
inline Tensor linear(Engine& e, const Tensor& x, const Tensor& w, const Tensor* b = nullptr) {
  Tensor y = matmul(e, x, w);
  return b ? add(e, y, *b) : y;
}

}  // namespace meftlab::ops
