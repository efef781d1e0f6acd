#pragma once

#include "vsr/tensor.hpp"

namespace vsr {

enum class ResizeFactor { up4, down4 };

/// Catmull-Rom cubic kernel (a = -0.5).
double cubic_kernel(double x);

/// Separable bicubic resampling with clamped edges, applied per plane.
///
/// Both directions evaluate the unstretched kernel at the input grid, 4 taps
/// per axis. For down4 that is point sampling at (4o + 1.5) with no extra
/// low-pass; height and width must be divisible by 4.
TensorF bicubic_resize(const TensorF& img, ResizeFactor factor);

}  // namespace vsr
