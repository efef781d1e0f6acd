#include "vsr/temporal.hpp"

#include <string>

namespace vsr {

int reflect_index(int i, int len) {
  if (len == 1) return 0;
  const int period = 2 * (len - 1);
  while (i < 0 || i >= len) {
    if (i < 0) i = -i;
    if (i >= len) i = period - i;
  }
  return i;
}

TemporalWindow temporal_window(int seq_len, int t, int radius) {
  std::vector<std::string> errors;
  if (seq_len < 1) errors.push_back("sequence length must be >= 1, got " + std::to_string(seq_len));
  if (radius < 0) errors.push_back("window radius T must be >= 0, got " + std::to_string(radius));
  if (t < 0 || t >= seq_len) {
    errors.push_back("target frame " + std::to_string(t) + " outside [0, " +
                     std::to_string(seq_len) + ")");
  }
  if (seq_len >= 1 && radius >= seq_len) {
    errors.push_back("window radius T=" + std::to_string(radius) +
                     " must be smaller than the sequence length " + std::to_string(seq_len));
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));

  TemporalWindow win{t, radius, {}};
  win.indices.reserve(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) win.indices.push_back(reflect_index(t + k, seq_len));
  return win;
}

SuperImage build_super_image(std::span<const TensorF> frames, const TemporalWindow& window) {
  if (frames.empty()) throw Error("build_super_image: no frames");
  const Shape ref = frames.front().shape();
  std::vector<TensorF> parts;
  parts.reserve(window.indices.size());
  for (int idx : window.indices) {
    if (idx < 0 || idx >= static_cast<int>(frames.size())) {
      throw DimensionError("build_super_image", "frame_index", static_cast<long>(frames.size()),
                           idx);
    }
    const TensorF& f = frames[static_cast<std::size_t>(idx)];
    require_same_shape("build_super_image", {1, 3, ref.h, ref.w}, f.shape());
    parts.push_back(f);
  }
  return SuperImage{concat_channels<float>(parts), window.t, window.radius, window.indices};
}

TensorF center_frame(const TensorF& super_image, int radius) {
  if (super_image.c() != super_image_channels(radius)) {
    throw DimensionError("center_frame", "c", super_image_channels(radius), super_image.c());
  }
  return slice_channels(super_image, 3 * radius, 3);
}

}  // namespace vsr
