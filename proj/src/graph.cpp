#include "vsr/graph.hpp"

#include <algorithm>
#include <atomic>

namespace vsr {

namespace {
std::atomic<bool> g_check_finite{false};
}

void set_check_finite(bool on) { g_check_finite.store(on); }
bool check_finite() { return g_check_finite.load(); }

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::parameter: return "parameter";
    case OpTag::constant: return "constant";
    case OpTag::conv2d: return "conv2d";
    case OpTag::batchnorm: return "batchnorm";
    case OpTag::relu: return "relu";
    case OpTag::sigmoid: return "sigmoid";
    case OpTag::pixel_shuffle: return "pixel_shuffle";
    case OpTag::pixel_unshuffle: return "pixel_unshuffle";
    case OpTag::concat_channels: return "concat_channels";
    case OpTag::slice_channels: return "slice_channels";
    case OpTag::softmax_over_models: return "softmax_over_models";
    case OpTag::upsample_nearest: return "upsample_nearest";
    case OpTag::add: return "add";
    case OpTag::scale: return "scale";
    case OpTag::mul_channel: return "mul_channel";
    case OpTag::global_avg_pool: return "global_avg_pool";
    case OpTag::weighted_fuse: return "weighted_fuse";
    case OpTag::loss_l1: return "loss_l1";
    case OpTag::loss_mse: return "loss_mse";
    case OpTag::sum: return "sum";
  }
  return "unknown";
}

template <typename S>
Var<S> Graph<S>::constant(Tensor<S> value) {
  Node node;
  node.tag = OpTag::constant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename S>
Var<S> Graph<S>::parameter(Tensor<S>& param) {
  Node node;
  node.tag = OpTag::parameter;
  node.param = &param;
  node.requires_grad = recording_;
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename S>
Var<S> Graph<S>::record(OpTag tag, std::vector<Var<S>> inputs, Tensor<S> value,
                        BackwardFn backward, std::vector<Tensor<S>> saved) {
  if (check_finite() && !value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op_name(tag));
  }
  Node node;
  node.tag = tag;
  node.value = std::move(value);
  for (const auto& v : inputs) {
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  node.requires_grad = node.requires_grad && recording_;
  if (node.requires_grad) {
    node.backward = std::move(backward);
    node.saved = std::move(saved);
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename S>
const Tensor<S>& Graph<S>::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.param != nullptr ? *n.param : n.value;
}

template <typename S>
std::span<S> Graph<S>::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).numel(), S(0));
  return n.grad;
}

template <typename S>
void Graph<S>::backward(Var<S> root) {
  if (root.graph != this) throw Error("backward: root belongs to another graph");
  if (value(root.id).numel() != 1) {
    throw DimensionError("backward", "numel", 1, static_cast<long>(value(root.id).numel()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(root.id)[0] = S(1);
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
  // Every bound parameter gets a gradient buffer, zero when it was unused.
  for (auto& n : nodes_) {
    if (n.param == nullptr || !n.requires_grad) continue;
    std::span<S> dst = n.param->grad();
    if (n.grad.empty()) continue;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace vsr
