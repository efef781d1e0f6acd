#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr {

enum class OpTag : std::uint8_t {
  parameter,
  constant,
  conv2d,
  batchnorm,
  relu,
  sigmoid,
  pixel_shuffle,
  pixel_unshuffle,
  concat_channels,
  slice_channels,
  softmax_over_models,
  upsample_nearest,
  add,
  scale,
  mul_channel,
  global_avg_pool,
  weighted_fuse,
  loss_l1,
  loss_mse,
  sum,
};

const char* op_name(OpTag tag);

/// When enabled, every recorded op output is scanned and a NonFiniteError is
/// thrown at the first NaN/Inf. Off by default.
void set_check_finite(bool on);
bool check_finite();

template <typename S>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <typename S>
struct Var {
  Graph<S>* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor<S>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so node ids are
/// already a topological order and backward is a single reverse sweep.
template <typename S>
class Graph {
 public:
  /// Reads the node's output adjoint and accumulates into its inputs' adjoints.
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  struct Node {
    OpTag tag = OpTag::constant;
    std::vector<std::uint32_t> inputs;
    Tensor<S> value;
    std::vector<Tensor<S>> saved;
    std::vector<S> grad;
    bool requires_grad = false;
    Tensor<S>* param = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<S> constant(Tensor<S> value);
  /// Leaf bound to an external tensor. backward() accumulates into param.grad().
  Var<S> parameter(Tensor<S>& param);

  /// Append an op node. `backward` may be empty for ops no input needs grads of.
  Var<S> record(OpTag tag, std::vector<Var<S>> inputs, Tensor<S> value, BackwardFn backward,
                std::vector<Tensor<S>> saved = {});

  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  Node& node(std::uint32_t id) { return nodes_[id]; }
  const Tensor<S>& value(std::uint32_t id) const;
  std::size_t size() const { return nodes_.size(); }

  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  /// Adjoint of node `id`, allocated zero-filled on first use.
  std::span<S> grad_buffer(std::uint32_t id);
  /// Adjoint after backward(); empty when the node received none.
  std::span<const S> grad(Var<S> v) const { return nodes_[v.id].grad; }

  /// Seeds d(root)/d(root) = 1 and sweeps in reverse. Root must be scalar.
  void backward(Var<S> root);

  /// With recording off, ops keep values only: no saved activations, no
  /// backward closures. Use for inference.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

 private:
  std::deque<Node> nodes_;  // stable references across appends
  bool recording_ = true;
};

template <typename S>
const Tensor<S>& Var<S>::value() const {
  return graph->value(id);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace vsr
