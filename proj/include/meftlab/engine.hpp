#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "meftlab/tensor.hpp"

namespace meftlab {

/// Which part of the model a tape node or parameter belongs to.
enum class Owner : std::uint8_t { Backbone = 0, Side = 1, Head = 2 };
std::string_view owner_name(Owner owner);

enum class Precision { F32, F64 };

/// Differentiable primitives. `Leaf` is the tape entry of a trainable
/// parameter and is not a primitive; it cannot be passed to Engine::apply.
enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Mul,
  Scale,
  Transpose,
  Reshape,
  ConcatRows,
  ConcatCols,
  SliceCols,
  ShiftRows,
  SoftmaxRows,
  LayerNorm,
  Relu,
  Gelu,
  Sigmoid,
  MeanOverAxis,
  EmbeddingAdd,
  CrossEntropyWithLogits,
  CosineRows,
  L1NormalizeRows,
};

std::string_view op_name(Op op);
/// Parses the kebab-case primitive name ("softmax-rows"); throws
/// std::invalid_argument for an unknown kind.
Op op_from_name(std::string_view name);

/// Retention rule table. A node is recorded only when at least one input is
/// on the tape and retention is enabled. For a recorded node the backward rule
/// keeps the buffers below; `E` is the engine element size (4 for f32, 8 for
/// f64). Parameter buffers are owned by the ParamStore and never counted.
///
///   matmul(A,B)         A if B needs grad, B if A needs grad   (E each elem)
///   mul(a,b)            b if a needs grad, a if b needs grad   (E each elem)
///   softmax-rows        output                                 (E each elem)
///   sigmoid             output                                 (E each elem)
///   gelu                input                                  (E each elem)
///   layernorm           normalized input + 1/std per row       (E each elem)
///   relu                sign mask                              (1 byte/elem)
///   cross-entropy       softmax probabilities                  (E each elem)
///   cosine-rows         both inputs + 3 scalars per row        (E each elem)
///   l1-normalize-rows   input + 1 sum per row                  (E each elem)
///   everything else     nothing
std::string_view retention_rule(Op op);

struct OpAttrs {
  double scalar{1.0};               // scale factor
  double eps{1e-5};                 // layernorm epsilon
  std::size_t begin{0};             // slice-cols [begin, end)
  std::size_t end{0};
  int axis{0};                      // mean-over-axis: 0 reduces rows, 1 reduces cols
  long shift{0};                    // shift-rows: out[t] = in[t - shift], zero filled
  Shape shape{};                    // reshape target
  std::vector<std::size_t> labels;  // cross-entropy targets, one per row
};

using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

inline constexpr NodeId kNoNode = ~NodeId{0};

struct TapeNode {
  Op op{Op::Leaf};
  std::vector<NodeId> inputs;  // kNoNode for inputs that are constants
  std::size_t retained_bytes{0};
  Owner owner{Owner::Backbone};
  int layer{-1};  // encoder layer tag, 0 = front-end, -1 = none
  bool requires_grad_path{true};
  Shape shape{};
  double backward_flops{0.0};
  BackwardFn backward;
  Buffer* sink{nullptr};  // leaves only: the parameter's grad accumulator
};

struct BackwardStats {
  std::array<std::size_t, 3> visited_by_owner{};
  std::set<int> backbone_layers_visited;
  double flops{0.0};

  [[nodiscard]] std::size_t visited(Owner owner) const {
    return visited_by_owner[static_cast<std::size_t>(owner)];
  }
};

/// Reverse-mode autodiff on an explicit tape with owner-tagged nodes and
/// retained-activation accounting. One instance per execution context.
class Engine {
 public:
  explicit Engine(Precision precision = Precision::F64);

  [[nodiscard]] Precision precision() const { return precision_; }
  [[nodiscard]] std::size_t element_bytes() const { return precision_ == Precision::F32 ? 4 : 8; }
  void set_parallel_kernels(bool on) { parallel_kernels_ = on; }
  [[nodiscard]] bool parallel_kernels() const { return parallel_kernels_; }

  Tensor apply(Op kind, std::span<const Tensor> inputs, Owner owner, const OpAttrs& attrs = {});
  Tensor apply(Op kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {}) {
    return apply(kind, inputs, owner_, attrs);
  }

  /// Wraps a parameter buffer. Trainable parameters get a leaf node (when
  /// retention is on) whose gradient is accumulated into `grad_sink`.
  Tensor parameter(std::shared_ptr<const Buffer> value, Shape shape, Buffer* grad_sink,
                   bool trainable, Owner owner);

  /// Accumulates d(loss)/d(param) into every reachable leaf and consumes the tape.
  void backward(const Tensor& loss);
  /// Drops the tape without a backward pass (e.g. after evaluation).
  void clear_tape();

  [[nodiscard]] bool retaining() const { return detach_depth_ == 0; }
  [[nodiscard]] std::size_t peak_retained_bytes() const { return peak_bytes_; }
  [[nodiscard]] std::size_t live_retained_bytes() const { return live_bytes_; }
  /// Peak restarts from the currently live bytes (zero when the tape is empty).
  void reset_accounting() { peak_bytes_ = live_bytes_; }

  [[nodiscard]] const BackwardStats& last_backward() const { return stats_; }
  [[nodiscard]] std::size_t tape_size() const { return tape_.size(); }
  [[nodiscard]] const TapeNode& node(NodeId id) const { return tape_.at(id); }

  [[nodiscard]] Owner current_owner() const { return owner_; }
  [[nodiscard]] int current_layer() const { return layer_; }

  /// While alive, primitives record nothing and retain nothing.
  class DetachedScope {
   public:
    explicit DetachedScope(Engine& engine) : engine_(engine) { ++engine_.detach_depth_; }
    ~DetachedScope() { --engine_.detach_depth_; }
    DetachedScope(const DetachedScope&) = delete;
    DetachedScope& operator=(const DetachedScope&) = delete;

   private:
    Engine& engine_;
  };

  /// Sets the owner tag and layer tag of nodes recorded while alive.
  class Tag {
   public:
    Tag(Engine& engine, Owner owner, int layer = -1)
        : engine_(engine), owner_(engine.owner_), layer_(engine.layer_) {
      engine_.owner_ = owner;
      engine_.layer_ = layer;
    }
    ~Tag() {
      engine_.owner_ = owner_;
      engine_.layer_ = layer_;
    }
    Tag(const Tag&) = delete;
    Tag& operator=(const Tag&) = delete;

   private:
    Engine& engine_;
    Owner owner_;
    int layer_;
  };

 private:
  friend struct OpContext;
  NodeId record(TapeNode node);

  Precision precision_;
  bool parallel_kernels_{true};
  int detach_depth_{0};
  Owner owner_{Owner::Backbone};
  int layer_{-1};
  std::vector<TapeNode> tape_;
  std::size_t live_bytes_{0};
  std::size_t peak_bytes_{0};
  BackwardStats stats_;
};

/// Runs `body` with retention disabled and returns its result.
template <class Body>
decltype(auto) detached_scope(Engine& engine, Body&& body) {
  Engine::DetachedScope scope(engine);
  return std::forward<Body>(body)();
}

}  // namespace meftlab
