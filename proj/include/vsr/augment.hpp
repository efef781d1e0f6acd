#pragma once

#include <functional>
#include <span>
#include <vector>

#include "vsr/rng.hpp"
#include "vsr/sr_models.hpp"
#include "vsr/temporal.hpp"

namespace vsr {

/// One element of the 16-element test-time transform set. Spatial parts act
/// in the fixed order vflip -> hflip -> rot90 (counter-clockwise); tflip
/// reverses the frame order of a super-image.
struct GeoTransform {
  bool vflip = false;
  bool hflip = false;
  bool rot90 = false;
  bool tflip = false;

  bool is_identity() const { return !vflip && !hflip && !rot90 && !tflip; }
  bool operator==(const GeoTransform&) const = default;
};

/// {id, v} x {id, h} x {id, r90} x {id, t}; identity first.
std::vector<GeoTransform> enumerate_self_ensemble();
/// The 8 members without rot90, for non-square inputs.
std::vector<GeoTransform> enumerate_without_rotation();

/// Spatial part only, applied to every plane. rot90 requires h == w.
TensorF apply_spatial(const GeoTransform& gt, const TensorF& img);
SuperImage apply(const GeoTransform& gt, const SuperImage& s);
/// Undo the spatial part on an output frame (tflip has no spatial effect).
TensorF invert_output(const GeoTransform& gt, const TensorF& hr);

/// Four independent fair coins.
GeoTransform sample_train_augmentation(Rng& rng);

using FrameModel = std::function<TensorF(const SuperImage&)>;

struct SelfEnsembleResult {
  TensorF output;
  int branches = 0;
  bool rotation_excluded = false;  // non-square input: 8 branches instead of 16
};

/// Mean of invert_output(t, model(apply(t, s))) over `transforms`
/// (default: all 16, or the 8 rotation-free ones when s is not square).
SelfEnsembleResult self_ensemble_infer(const FrameModel& model, const SuperImage& s,
                                       std::span<const GeoTransform> transforms = {});
SelfEnsembleResult self_ensemble_infer(SrModel& model, const SuperImage& s,
                                       std::span<const GeoTransform> transforms = {});

}  // namespace vsr
