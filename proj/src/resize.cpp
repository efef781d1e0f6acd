#include "vsr/resize.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vsr {

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  int width = 0;              // taps per output sample
  std::vector<int> index;     // out_len * width, clamped source indices
  std::vector<double> weight; // out_len * width
};

// Output sample o sits at source coordinate (o + 0.5) / scale - 0.5. The
// kernel is never stretched, so downscaling samples the source with the plain
// 4-tap Catmull-Rom filter and keeps its aliasing.
Taps make_taps(int in_len, int out_len, double scale) {
  Taps taps;
  taps.width = 4;
  taps.index.resize(static_cast<std::size_t>(out_len) * taps.width);
  taps.weight.resize(taps.index.size());
  for (int o = 0; o < out_len; ++o) {
    const double center = (o + 0.5) / scale - 0.5;
    const int first = static_cast<int>(std::floor(center)) - 1;
    for (int k = 0; k < taps.width; ++k) {
      const int src = first + k;
      taps.index[o * taps.width + k] = std::clamp(src, 0, in_len - 1);
      taps.weight[o * taps.width + k] = cubic_kernel(center - src);
    }
  }
  return taps;
}

}  // namespace

TensorF bicubic_resize(const TensorF& img, ResizeFactor factor) {
  const bool up = factor == ResizeFactor::up4;
  if (!up) {
    if (img.h() % 4 != 0) throw DimensionError("bicubic_resize", "h", 4, img.h());
    if (img.w() % 4 != 0) throw DimensionError("bicubic_resize", "w", 4, img.w());
  }
  const double scale = up ? 4.0 : 0.25;
  const int oh = up ? img.h() * 4 : img.h() / 4;
  const int ow = up ? img.w() * 4 : img.w() / 4;
  const Taps th = make_taps(img.h(), oh, scale);
  const Taps tw = make_taps(img.w(), ow, scale);

  TensorF out({img.n(), img.c(), oh, ow});
  std::vector<double> rows(static_cast<std::size_t>(img.h()) * ow);
  for (int n = 0; n < img.n(); ++n) {
    for (int c = 0; c < img.c(); ++c) {
      const float* src = img.plane(n, c);
      // Horizontal pass into rows, then vertical pass.
      for (int y = 0; y < img.h(); ++y) {
        const float* row = src + static_cast<std::size_t>(y) * img.w();
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int k = 0; k < tw.width; ++k) {
            acc += tw.weight[x * tw.width + k] * row[tw.index[x * tw.width + k]];
          }
          rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
      }
      float* dst = out.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int k = 0; k < th.width; ++k) {
            acc += th.weight[y * th.width + k] *
                   rows[static_cast<std::size_t>(th.index[y * th.width + k]) * ow + x];
          }
          dst[static_cast<std::size_t>(y) * ow + x] = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

}  // namespace vsr
