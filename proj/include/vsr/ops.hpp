#pragma once

#include <span>
#include <vector>

#include "vsr/graph.hpp"

namespace vsr {

enum class Activation { relu, sigmoid };
enum class LossKind { l1, mse };
enum class BnMode { train, eval };

/// Running mean/variance of a batch-norm layer. Not a trainable parameter.
template <typename S>
struct BatchNormStats {
  std::vector<S> running_mean;
  std::vector<S> running_var;

  BatchNormStats() = default;
  explicit BatchNormStats(int channels)
      : running_mean(static_cast<std::size_t>(channels), S(0)),
        running_var(static_cast<std::size_t>(channels), S(1)) {}
};

// Differentiable ops. Each appends one node to the inputs' graph.

/// Cross-correlation (no kernel flip). weight is (c_out, c_in, k, k), bias
/// is (1, c_out, 1, 1).
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, Var<S> bias, int stride, int padding);

/// gamma/beta are (1, c, 1, 1). Train mode normalizes with biased batch
/// statistics and folds the unbiased variance into the running stats.
template <typename S>
Var<S> batchnorm(Var<S> x, Var<S> gamma, Var<S> beta, BatchNormStats<S>& stats, BnMode mode,
                 double eps = 1e-5, double momentum = 0.1);

template <typename S>
Var<S> relu(Var<S> x);
template <typename S>
Var<S> sigmoid(Var<S> x);
template <typename S>
Var<S> activation(Var<S> x, Activation kind) {
  return kind == Activation::relu ? relu(x) : sigmoid(x);
}

/// (n, c*r*r, h, w) -> (n, c, h*r, w*r); sub-channel i*r + j lands at (i, j).
template <typename S>
Var<S> pixel_shuffle(Var<S> x, int r);
/// Exact inverse of pixel_shuffle.
template <typename S>
Var<S> pixel_unshuffle(Var<S> x, int r);

template <typename S>
Var<S> concat_channels(std::span<const Var<S>> parts);
template <typename S>
Var<S> slice_channels(Var<S> x, int begin, int count);

/// Softmax across groups of `models` consecutive batch items at every
/// spatial location of a one-channel map. models = 0 means the whole batch.
template <typename S>
Var<S> softmax_over_models(Var<S> scores, int models = 0);

template <typename S>
Var<S> upsample_nearest(Var<S> x, int factor);

template <typename S>
Var<S> add(Var<S> a, Var<S> b);
template <typename S>
Var<S> scale(Var<S> x, double factor);
/// x (n, c, h, w) times gate (n, c, 1, 1), broadcast over space.
template <typename S>
Var<S> mul_channel(Var<S> x, Var<S> gate);
/// (n, c, h, w) -> (n, c, 1, 1) spatial mean.
template <typename S>
Var<S> global_avg_pool(Var<S> x);

/// out[b] = sum_k weights[b*models + k] * candidates[b*models + k].
/// weights is (B*models, 1, H, W), candidates (B*models, C, H, W).
template <typename S>
Var<S> weighted_fuse(Var<S> weights, Var<S> candidates, int models);

/// Mean absolute or mean squared error over every element.
template <typename S>
Var<S> loss(Var<S> pred, Var<S> target, LossKind kind);
template <typename S>
Var<S> sum(Var<S> x);

// Value-level versions of the pure rearrangements.

template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, int r);
template <typename S>
Tensor<S> pixel_unshuffle(const Tensor<S>& x, int r);
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, int factor);

}  // namespace vsr
