#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vsr/dataset.hpp"
#include "vsr/ensemble.hpp"

namespace vsr {

inline constexpr double kIdenticalPsnr = 100.0;

/// 10 log10(1 / mse) over every RGB element, MAX = 1, no border crop.
/// Identical inputs give kIdenticalPsnr.
double psnr(const TensorF& a, const TensorF& b);

struct FrameScore {
  std::string model;
  std::string sequence;
  int frame = 0;
  double psnr_db = 0.0;
};

struct EvalReport {
  std::vector<FrameScore> rows;  // model-major, then sequence, then frame order
  std::vector<std::string> models;
  bool self_ensemble = false;

  double overall_mean(const std::string& model) const;
  /// sequence id -> mean PSNR, for one model.
  std::map<std::string, double> sequence_means(const std::string& model) const;

  /// "# ..." convention line, `model,sequence,frame,psnr_db` rows, then
  /// aggregate rows with frame "mean" (per sequence, then sequence "all").
  std::string to_csv() const;
  std::string summary() const;
};

/// Produces the HR estimate of frame t of a LR sequence.
using FrameSource = std::function<TensorF(const VideoSequence& lr, int t)>;

struct NamedSource {
  std::string name;
  FrameSource source;
};

/// Single SR model with its own temporal radius.
FrameSource model_source(SrModel& model, bool self_ensemble);
FrameSource bicubic_source();
/// Fuses the outputs of `members` (N >= 1) with the net, or averages them when
/// `net` is null.
FrameSource ensemble_source(std::vector<FrameSource> members, EnsembleNet* net);

/// Every frame of every sequence `which` (indices into data.hr / data.lr)
/// for every source.
EvalReport evaluate(std::span<const NamedSource> sources, const Dataset& data,
                    const std::vector<int>& which, bool self_ensemble_flag = false);

/// Mean PSNR of one source over the listed sequences; no report assembled.
double mean_psnr(const FrameSource& source, const Dataset& data, const std::vector<int>& which);

}  // namespace vsr
