#include "vsr/augment.hpp"

#include <algorithm>

namespace vsr {

std::vector<GeoTransform> enumerate_self_ensemble() {
  std::vector<GeoTransform> out;
  for (int i = 0; i < 16; ++i) {
    out.push_back({(i & 1) != 0, (i & 2) != 0, (i & 4) != 0, (i & 8) != 0});
  }
  return out;
}

std::vector<GeoTransform> enumerate_without_rotation() {
  std::vector<GeoTransform> out;
  for (const auto& t : enumerate_self_ensemble()) {
    if (!t.rot90) out.push_back(t);
  }
  return out;
}

namespace {

TensorF flip_rows(const TensorF& x) {
  TensorF out(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < x.h(); ++y) {
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(x.h() - 1 - y) * x.w(), x.w(),
                    out.plane(n, c) + static_cast<std::size_t>(y) * x.w());
      }
    }
  }
  return out;
}

TensorF flip_cols(const TensorF& x) {
  TensorF out(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < x.h(); ++y) {
        const float* src = x.plane(n, c) + static_cast<std::size_t>(y) * x.w();
        float* dst = out.plane(n, c) + static_cast<std::size_t>(y) * x.w();
        std::reverse_copy(src, src + x.w(), dst);
      }
    }
  }
  return out;
}

// Counter-clockwise quarter turn: out(i, j) = in(j, W - 1 - i).
TensorF rotate_ccw(const TensorF& x) {
  if (x.h() != x.w()) throw DimensionError("rot90", "w (square input required)", x.h(), x.w());
  TensorF out({x.n(), x.c(), x.w(), x.h()});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (int i = 0; i < out.h(); ++i) {
        for (int j = 0; j < out.w(); ++j) {
          dst[static_cast<std::size_t>(i) * out.w() + j] =
              src[static_cast<std::size_t>(j) * x.w() + (x.w() - 1 - i)];
        }
      }
    }
  }
  return out;
}

// Clockwise quarter turn: out(i, j) = in(H - 1 - j, i).
TensorF rotate_cw(const TensorF& x) {
  if (x.h() != x.w()) throw DimensionError("rot90", "w (square input required)", x.h(), x.w());
  TensorF out({x.n(), x.c(), x.w(), x.h()});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (int i = 0; i < out.h(); ++i) {
        for (int j = 0; j < out.w(); ++j) {
          dst[static_cast<std::size_t>(i) * out.w() + j] =
              src[static_cast<std::size_t>(x.h() - 1 - j) * x.w() + i];
        }
      }
    }
  }
  return out;
}

}  // namespace

TensorF apply_spatial(const GeoTransform& gt, const TensorF& img) {
  if (gt.rot90 && img.h() != img.w()) {
    throw DimensionError("apply_spatial", "w (rot90 needs a square input)", img.h(), img.w());
  }
  TensorF out = img;
  if (gt.vflip) out = flip_rows(out);
  if (gt.hflip) out = flip_cols(out);
  if (gt.rot90) out = rotate_ccw(out);
  return out;
}

SuperImage apply(const GeoTransform& gt, const SuperImage& s) {
  SuperImage out{apply_spatial(gt, s.tensor), s.t, s.radius, s.indices};
  if (gt.tflip) {
    const int frames = s.frames();
    if (out.tensor.c() != 3 * frames) {
      throw DimensionError("apply", "c", 3 * frames, out.tensor.c());
    }
    TensorF flipped(out.tensor.shape());
    const std::size_t block = 3 * out.tensor.shape().plane();
    for (int n = 0; n < out.tensor.n(); ++n) {
      for (int k = 0; k < frames; ++k) {
        std::copy_n(out.tensor.plane(n, 3 * (frames - 1 - k)), block, flipped.plane(n, 3 * k));
      }
    }
    out.tensor = std::move(flipped);
    std::reverse(out.indices.begin(), out.indices.end());
  }
  return out;
}

TensorF invert_output(const GeoTransform& gt, const TensorF& hr) {
  TensorF out = hr;
  if (gt.rot90) out = rotate_cw(out);
  if (gt.hflip) out = flip_cols(out);
  if (gt.vflip) out = flip_rows(out);
  return out;
}

GeoTransform sample_train_augmentation(Rng& rng) {
  GeoTransform t;
  t.vflip = rng.coin();
  t.hflip = rng.coin();
  t.rot90 = rng.coin();
  t.tflip = rng.coin();
  return t;
}

SelfEnsembleResult self_ensemble_infer(const FrameModel& model, const SuperImage& s,
                                       std::span<const GeoTransform> transforms) {
  SelfEnsembleResult result;
  std::vector<GeoTransform> defaults;
  if (transforms.empty()) {
    const bool square = s.tensor.h() == s.tensor.w();
    defaults = square ? enumerate_self_ensemble() : enumerate_without_rotation();
    result.rotation_excluded = !square;
    transforms = defaults;
  }
  std::vector<double> acc;
  Shape shape{};
  for (const auto& t : transforms) {
    const TensorF y = invert_output(t, model(apply(t, s)));
    if (acc.empty()) {
      shape = y.shape();
      acc.assign(y.numel(), 0.0);
    }
    require_same_shape("self_ensemble_infer", shape, y.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += y.data()[i];
  }
  result.branches = static_cast<int>(transforms.size());
  result.output = TensorF(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    result.output.data()[i] = static_cast<float>(acc[i] / result.branches);
  }
  return result;
}

SelfEnsembleResult self_ensemble_infer(SrModel& model, const SuperImage& s,
                                       std::span<const GeoTransform> transforms) {
  return self_ensemble_infer([&model](const SuperImage& x) { return sr_forward(model, x); }, s,
                             transforms);
}

}  // namespace vsr
