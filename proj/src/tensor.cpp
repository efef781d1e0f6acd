#include "vsr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace vsr {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

template <typename S>
Tensor<S>::Tensor(Shape shape, S fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw Error("negative tensor extent " + shape.str());
  }
}

template <typename S>
Tensor<S>::Tensor(Shape shape, std::vector<S> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw DimensionError("Tensor", "numel", static_cast<long>(shape_.numel()),
                         static_cast<long>(data_.size()));
  }
}

template <typename S>
std::span<S> Tensor<S>::grad() {
  if (!grad_) grad_.emplace(data_.size(), S(0));
  return *grad_;
}

template <typename S>
std::span<const S> Tensor<S>::grad() const {
  if (!grad_) return {};
  return *grad_;
}

template <typename S>
void Tensor<S>::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), S(0));
  } else {
    grad_.emplace(data_.size(), S(0));
  }
}

template <typename S>
bool Tensor<S>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
}

template <typename S>
void Tensor<S>::fill(S value) {
  std::fill(data_.begin(), data_.end(), value);
}

template class Tensor<float>;
template class Tensor<double>;

void require_same_shape(const char* op, const Shape& expected, const Shape& actual) {
  if (expected.n != actual.n) throw DimensionError(op, "n", expected.n, actual.n);
  if (expected.c != actual.c) throw DimensionError(op, "c", expected.c, actual.c);
  if (expected.h != actual.h) throw DimensionError(op, "h", expected.h, actual.h);
  if (expected.w != actual.w) throw DimensionError(op, "w", expected.w, actual.w);
}

template <typename S>
Tensor<S> concat_channels(std::span<const Tensor<S>> parts) {
  if (parts.empty()) throw Error("concat_channels: no parts");
  const Shape base = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    if (p.n() != base.n) throw DimensionError("concat_channels", "n", base.n, p.n());
    if (p.h() != base.h) throw DimensionError("concat_channels", "h", base.h, p.h());
    if (p.w() != base.w) throw DimensionError("concat_channels", "w", base.w, p.w());
    channels += p.c();
  }
  Tensor<S> out({base.n, channels, base.h, base.w});
  const std::size_t plane = base.plane();
  for (int n = 0; n < base.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      std::copy_n(p.plane(n, 0), plane * p.c(), out.plane(n, c0));
      c0 += p.c();
    }
  }
  return out;
}

template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x.c()) {
    throw DimensionError("slice_channels", "c", x.c(), begin + count);
  }
  Tensor<S> out({x.n(), count, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n) {
    std::copy_n(x.plane(n, begin), x.shape().plane() * count, out.plane(n, 0));
  }
  return out;
}

template <typename S>
Tensor<S> stack_batch(std::span<const Tensor<S>> parts) {
  if (parts.empty()) throw Error("stack_batch: no parts");
  const Shape base = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.c() != base.c) throw DimensionError("stack_batch", "c", base.c, p.c());
    if (p.h() != base.h) throw DimensionError("stack_batch", "h", base.h, p.h());
    if (p.w() != base.w) throw DimensionError("stack_batch", "w", base.w, p.w());
    total += p.n();
  }
  std::vector<S> data;
  data.reserve(static_cast<std::size_t>(total) * base.c * base.plane());
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor<S>({total, base.c, base.h, base.w}, std::move(data));
}

template <typename S>
Tensor<S> batch_item(const Tensor<S>& x, int index) {
  if (index < 0 || index >= x.n()) throw DimensionError("batch_item", "n", x.n(), index);
  const std::size_t len = static_cast<std::size_t>(x.c()) * x.shape().plane();
  std::vector<S> data(x.data().begin() + static_cast<std::ptrdiff_t>(len * index),
                      x.data().begin() + static_cast<std::ptrdiff_t>(len * (index + 1)));
  return Tensor<S>({1, x.c(), x.h(), x.w()}, std::move(data));
}

template <typename S>
Tensor<S> crop(const Tensor<S>& img, int y, int x, int hh, int ww) {
  if (y < 0 || hh < 0 || y + hh > img.h()) throw DimensionError("crop", "h", img.h(), y + hh);
  if (x < 0 || ww < 0 || x + ww > img.w()) throw DimensionError("crop", "w", img.w(), x + ww);
  Tensor<S> out({img.n(), img.c(), hh, ww});
  for (int n = 0; n < img.n(); ++n) {
    for (int c = 0; c < img.c(); ++c) {
      const S* src = img.plane(n, c);
      S* dst = out.plane(n, c);
      for (int r = 0; r < hh; ++r) {
        std::copy_n(src + static_cast<std::size_t>(y + r) * img.w() + x, ww,
                    dst + static_cast<std::size_t>(r) * ww);
      }
    }
  }
  return out;
}

#define VSR_INSTANTIATE(S)                                                   \
  template Tensor<S> concat_channels<S>(std::span<const Tensor<S>>);         \
  template Tensor<S> slice_channels<S>(const Tensor<S>&, int, int);          \
  template Tensor<S> stack_batch<S>(std::span<const Tensor<S>>);             \
  template Tensor<S> batch_item<S>(const Tensor<S>&, int);                   \
  template Tensor<S> crop<S>(const Tensor<S>&, int, int, int, int);

VSR_INSTANTIATE(float)
VSR_INSTANTIATE(double)
#undef VSR_INSTANTIATE

}  // namespace vsr
