#pragma once

#include <span>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr {

/// Frame indices feeding the super-image of target frame `t`.
struct TemporalWindow {
  int t = 0;
  int radius = 0;            // T: frames on each side of t
  std::vector<int> indices;  // 2T+1 entries, window order
};

/// Early-fused input for one target frame: 2T+1 RGB frames stacked along
/// channels, frame block k holding frame window.indices[k].
struct SuperImage {
  TensorF tensor;  // (1, 3(2T+1), H_lr, W_lr)
  int t = 0;
  int radius = 0;
  std::vector<int> indices;

  int frames() const { return 2 * radius + 1; }
};

constexpr int super_image_channels(int radius) { return 3 * (2 * radius + 1); }

/// Mirror an index into [0, len) without repeating the boundary frame:
/// -1 -> 1, len -> len - 2.
int reflect_index(int i, int len);

/// Indices [t-T, ..., t+T], reflected at the sequence ends.
/// Throws ConfigError when T >= seq_len (reflection would have to fold twice).
TemporalWindow temporal_window(int seq_len, int t, int radius);

/// Concatenate the window's frames in window order. Frames are (1, 3, H, W).
SuperImage build_super_image(std::span<const TensorF> frames, const TemporalWindow& window);

/// The target frame's RGB block (channel block T).
TensorF center_frame(const TensorF& super_image, int radius);

}  // namespace vsr
