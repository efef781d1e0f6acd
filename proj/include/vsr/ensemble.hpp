#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vsr/optim.hpp"
#include "vsr/sr_models.hpp"

namespace vsr {

/// N aligned candidate frames, one per model.
struct CandidateSet {
  std::vector<TensorF> candidates;  // each (1, 3, H, W)
  std::vector<std::string> names;

  int size() const { return static_cast<int>(candidates.size()); }
  /// Throws on N < 1 or shape disagreement.
  void validate() const;
  /// (N, 3, H, W)
  TensorF stacked() const;
};

/// Per-pixel convex weights, (N, 1, H, W).
struct FusionWeights {
  TensorF weights;
};

/// Score ConvNet shared across candidates: three conv(k=2, s=2, p=0)-BN-ReLU
/// stages with 16, 32 and 64 channels, then a 1x1 conv to one channel, so a
/// (3, H, W) frame yields a (1, H/8, W/8) score map.
template <typename S>
class EnsembleNetT {
 public:
  static constexpr std::array<int, 4> kStageChannels{16, 32, 64, 1};
  static constexpr int kReduction = 8;

  explicit EnsembleNetT(std::uint64_t seed);

  /// candidates (K, 3, H, W) -> (K, 1, H/8, W/8).
  Var<S> score_maps(Graph<S>& g, const Tensor<S>& candidates, BnMode mode);
  /// candidates (B*N, 3, H, W) grouped by frame -> fused (B, 3, H, W).
  Var<S> fuse(Graph<S>& g, const Tensor<S>& candidates, int models, BnMode mode);

  std::vector<NamedParam<S>> named_parameters();
  std::vector<Tensor<S>*> parameters();
  std::size_t parameter_count() const;
  std::array<BatchNormStats<S>, 3>& bn_stats() { return stats_; }

 private:
  std::array<ConvLayer<S>, 3> convs_;
  std::array<Tensor<S>, 3> gamma_, beta_;
  std::array<BatchNormStats<S>, 3> stats_;
  ConvLayer<S> score_;
};

extern template class EnsembleNetT<float>;
extern template class EnsembleNetT<double>;

using EnsembleNet = EnsembleNetT<float>;

EnsembleNet build_ensemble_net(std::uint64_t seed);

/// Eval-mode score map of one (1, 3, H, W) candidate. H and W must be
/// multiples of 8; the error names the bottom/right padding required.
TensorF score_map(EnsembleNet& net, const TensorF& candidate);

/// Softmax across models at each location, then x8 nearest upsampling.
FusionWeights fusion_weights(const TensorF& score_maps);

/// sum_k w_k * candidate_k, weights broadcast across RGB.
TensorF fuse(const CandidateSet& cands, const FusionWeights& w);

TensorF average_ensemble(const CandidateSet& cands);

/// Full adaptive path: reflect-pad to a multiple of 8, score, fuse, crop back.
TensorF adaptive_fuse(EnsembleNet& net, const CandidateSet& cands);
/// Fusion weights used by adaptive_fuse, at the padded size.
FusionWeights adaptive_weights(EnsembleNet& net, const CandidateSet& cands);

/// One optimizer step on a batch. candidates is (B*N, 3, H, W) grouped by
/// frame, ground_truth (B, 3, H, W). Loss is the L1 distance summed over
/// each 8x8 RGB block and averaged over blocks; BN in train mode; the
/// candidates are constants. Returns the loss before the update.
double train_ensemble_step(EnsembleNet& net, Optimizer<float>& opt, const TensorF& candidates,
                           const TensorF& ground_truth, int models);

/// Reflect-pad bottom/right by (pad_h, pad_w).
TensorF reflect_pad(const TensorF& img, int pad_h, int pad_w);

void save_ensemble_checkpoint(const std::filesystem::path& path, EnsembleNet& net);
EnsembleNet load_ensemble_checkpoint(const std::filesystem::path& path);
std::vector<Record> ensemble_records(EnsembleNet& net);
void load_ensemble_records(std::span<const Record> records, EnsembleNet& net);

}  // namespace vsr
