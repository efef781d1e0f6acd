#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vsr/container.hpp"
#include "vsr/ops.hpp"
#include "vsr/rng.hpp"
#include "vsr/temporal.hpp"

namespace vsr {

enum class Arch { rdn, rcan, edsr };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

/// Backbone configuration. The first conv takes 3(2T+1) channels; everything
/// after it is the unmodified single-image design.
struct SrConfig {
  Arch arch = Arch::rdn;
  int radius = 2;            // T
  int width = 32;            // feature channels
  int num_blocks = 4;
  int growth = 16;           // rdn: channels added per dense layer
  int dense_layers = 3;      // rdn: conv layers per dense block
  int ca_reduction = 4;      // rcan: channel-attention bottleneck ratio
  double res_scale = 0.1;    // edsr: residual scaling
  bool bicubic_residual = false;
  int scale = 4;

  int input_channels() const { return super_image_channels(radius); }
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;
  bool operator==(const SrConfig&) const = default;
};

/// 2-D convolution layer parameters.
template <typename S>
struct ConvLayer {
  Tensor<S> weight;  // (c_out, c_in, k, k)
  Tensor<S> bias;    // (1, c_out, 1, 1)
  int stride = 1;
  int padding = 0;

  ConvLayer() = default;
  ConvLayer(int c_in, int c_out, int k, int stride, int padding);
  Var<S> operator()(Var<S> x);
};

/// U(-b, b) with b = 1 / sqrt(fan_in), fan_in = c_in * k * k (kaiming uniform, a = sqrt(5)).
template <typename S>
void kaiming_uniform(Tensor<S>& weight, Rng& rng);

/// Residual dense block: dense_layers 3x3 convs, each reading the concat of
/// the block input and all earlier layer outputs; 1x1 fusion; local residual.
template <typename S>
struct DenseBlockParams {
  std::vector<ConvLayer<S>> layers;
  ConvLayer<S> fusion;
};

/// Residual channel-attention block.
template <typename S>
struct AttentionBlockParams {
  ConvLayer<S> conv1, conv2;  // trunk
  ConvLayer<S> down, up;      // 1x1 bottleneck of the gate
};

/// Plain residual block with output scaling.
template <typename S>
struct ResidualBlockParams {
  ConvLayer<S> conv1, conv2;
};

template <typename S>
DenseBlockParams<S> make_dense_block(int width, int growth, int layers);
template <typename S>
AttentionBlockParams<S> make_attention_block(int width, int reduction);
template <typename S>
ResidualBlockParams<S> make_residual_block(int width);

/// When `concat_trace` is given, the channel count of every concatenation fed
/// to a layer (and to the fusion conv) is appended to it.
template <typename S>
Var<S> residual_dense_block(Var<S> x, DenseBlockParams<S>& p,
                            std::vector<int>* concat_trace = nullptr);
template <typename S>
Var<S> channel_attention_block(Var<S> x, AttentionBlockParams<S>& p);
template <typename S>
Var<S> residual_block(Var<S> x, ResidualBlockParams<S>& p, double res_scale);

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S>* tensor;
};

/// Adapted super-resolution network producing a 4x RGB frame from a super-image.
template <typename S>
class SrNet {
 public:
  SrNet(SrConfig config, std::uint64_t seed);

  const SrConfig& config() const { return config_; }
  std::vector<NamedParam<S>> named_parameters();
  std::vector<Tensor<S>*> parameters();
  std::size_t parameter_count() const;

  /// Batched forward; input is (B, 3(2T+1), h, w), output (B, 3, 4h, 4w).
  Var<S> forward(Graph<S>& g, const Tensor<S>& input);
  /// Forward without recording a backward tape.
  Tensor<S> infer(const Tensor<S>& input);

  /// Output tail: 3x3 conv to 3*16 channels followed by a x4 pixel shuffle.
  ConvLayer<S>& tail() { return tail_; }
  ConvLayer<S>& first_conv() { return head_; }

 private:
  SrConfig config_;
  ConvLayer<S> head_;
  ConvLayer<S> sfe2_;  // rdn only
  std::vector<DenseBlockParams<S>> dense_;
  std::vector<AttentionBlockParams<S>> attention_;
  std::vector<ResidualBlockParams<S>> residual_;
  ConvLayer<S> gff1_;  // rdn only: 1x1 global feature fusion
  ConvLayer<S> body_tail_;
  ConvLayer<S> tail_;
};

extern template class SrNet<float>;
extern template class SrNet<double>;

using SrModel = SrNet<float>;

/// Single-frame inference on a super-image; (1, 3, 4H, 4W).
/// Throws DimensionError when the channel count is not 3(2T+1).
TensorF sr_forward(SrModel& model, const SuperImage& s);

/// Config as "config.*" scalar records.
std::vector<Record> config_records(const SrConfig& config);
SrConfig config_from_records(std::span<const Record> records);

void save_sr_checkpoint(const std::filesystem::path& path, SrModel& model);
SrModel load_sr_checkpoint(const std::filesystem::path& path);
/// Restore named parameters from records into an already-built model.
void load_parameters(std::span<const Record> records, std::vector<NamedParam<float>> params,
                     const std::string& prefix = "");

}  // namespace vsr
