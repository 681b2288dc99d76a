#include "meftlab/engine.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>
#include <utility>

namespace meftlab {
namespace {

constexpr std::array<std::pair<Op, std::string_view>, 21> kOpNames{{
    {Op::Leaf, "leaf"},
    {Op::MatMul, "matmul"},
    {Op::Add, "add"},
    {Op::Mul, "mul"},
    {Op::Scale, "scale"},
    {Op::Transpose, "transpose"},
    {Op::Reshape, "reshape"},
    {Op::ConcatRows, "concat-rows"},
    {Op::ConcatCols, "concat-cols"},
    {Op::SliceCols, "slice-cols"},
    {Op::ShiftRows, "shift-rows"},
    {Op::SoftmaxRows, "softmax-rows"},
    {Op::LayerNorm, "layernorm"},
    {Op::Relu, "relu"},
    {Op::Gelu, "gelu"},
    {Op::Sigmoid, "sigmoid"},
    {Op::MeanOverAxis, "mean-over-axis"},
    {Op::EmbeddingAdd, "embedding-add"},
    {Op::CrossEntropyWithLogits, "cross-entropy-with-logits"},
    {Op::CosineRows, "cosine-rows"},
    {Op::L1NormalizeRows, "l1-normalize-rows"},
}};

}  // namespace

std::string_view owner_name(Owner owner) {
  switch (owner) {
    case Owner::Backbone: return "backbone";
    case Owner::Side: return "side";
    case Owner::Head: return "head";
  }
  return "?";
}

std::string_view op_name(Op op) {
  for (const auto& [k, name] : kOpNames) {
    if (k == op) return name;
  }
  return "?";
}

Op op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name && k != Op::Leaf) return k;
  }
  throw std::invalid_argument("unknown primitive kind '" + std::string(name) + "'");
}

std::string_view retention_rule(Op op) {
  switch (op) {
    case Op::MatMul: return "A if B needs grad, B if A needs grad";
    case Op::Mul: return "b if a needs grad, a if b needs grad";
    case Op::SoftmaxRows:
    case Op::Sigmoid: return "output";
    case Op::Gelu: return "input";
    case Op::LayerNorm: return "normalized input + 1/std per row";
    case Op::Relu: return "sign mask, 1 byte per element";
    case Op::CrossEntropyWithLogits: return "softmax probabilities";
    case Op::CosineRows: return "both inputs + 3 scalars per row";
    case Op::L1NormalizeRows: return "input + 1 sum per row";
    default: return "nothing";
  }
}

Engine::Engine(Precision precision) : precision_(precision) {}

NodeId Engine::record(TapeNode node) {
  if (tape_.size() >= kNoNode) throw std::length_error("tape exhausted");
  live_bytes_ += node.retained_bytes;
  peak_bytes_ = std::max(peak_bytes_, live_bytes_);
  tape_.push_back(std::move(node));
  return static_cast<NodeId>(tape_.size() - 1);
}

Tensor Engine::parameter(std::shared_ptr<const Buffer> value, Shape shape, Buffer* grad_sink,
                         bool trainable, Owner owner) {
  if (!value || value->size() != shape.size()) {
    throw ShapeError("parameter buffer does not match shape " + shape.str());
  }
  if (!trainable || !retaining()) return Tensor(shape, std::move(value), std::nullopt, true);
  if (grad_sink == nullptr || grad_sink->size() != shape.size()) {
    throw std::invalid_argument("trainable parameter needs a gradient accumulator of size " +
                                std::to_string(shape.size()));
  }
  TapeNode leaf;
  leaf.op = Op::Leaf;
  leaf.owner = owner;
  leaf.layer = layer_;
  leaf.shape = shape;
  leaf.sink = grad_sink;
  const NodeId id = record(std::move(leaf));
  return Tensor(shape, std::move(value), id, true);
}

void Engine::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
  }
  if (!loss.on_tape()) throw std::logic_error("backward: loss is not on the tape");
  stats_ = {};
  const NodeId root = *loss.node();
  std::vector<Buffer> grads(static_cast<std::size_t>(root) + 1);
  grads[root].assign(1, 1.0);
  std::vector<std::span<double>> grad_in;
  for (std::size_t id = root + 1; id-- > 0;) {
    TapeNode& node = tape_[id];
    Buffer& g = grads[id];
    if (g.empty()) continue;
    if (node.op == Op::Leaf) {
      Buffer& sink = *node.sink;
      for (std::size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
      Buffer().swap(g);
      continue;
    }
    ++stats_.visited_by_owner[static_cast<std::size_t>(node.owner)];
    if (node.owner == Owner::Backbone) stats_.backbone_layers_visited.insert(node.layer);
    stats_.flops += node.backward_flops;
    grad_in.assign(node.inputs.size(), {});
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const NodeId in = node.inputs[i];
      if (in == kNoNode) continue;
      Buffer& gi = grads[in];
      if (gi.empty()) gi.assign(tape_[in].shape.size(), 0.0);
      grad_in[i] = gi;
    }
    node.backward(g, grad_in);
    Buffer().swap(g);
  }
  clear_tape();
}

void Engine::clear_tape() {
  tape_.clear();
  live_bytes_ = 0;
}

}  // namespace meftlab
