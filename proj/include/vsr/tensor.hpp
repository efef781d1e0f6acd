#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vsr/error.hpp"

namespace vsr {

/// NCHW extents. All four are always present; unused axes are 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense 4-D array of scalars with an optional gradient buffer.
///
/// Storage is row-major NCHW. Copies are deep. `S` is float in normal use;
/// double exists so gradient checks can be run at tighter tolerances.
template <typename S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0));
  Tensor(Shape shape, std::vector<S> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<S> data() { return data_; }
  std::span<const S> data() const { return data_; }
  std::vector<S>& storage() { return data_; }
  const std::vector<S>& storage() const { return data_; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  S& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const S& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
  S* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const S* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.has_value(); }
  /// Gradient buffer; allocated (zero-filled) on first access.
  std::span<S> grad();
  std::span<const S> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  bool all_finite() const;
  void fill(S value);

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.begin(), data_.end());
    return Tensor<T>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_{};
  std::vector<S> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<S>> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;

// Plain (non-differentiable) helpers working directly on tensor values.

/// Concatenate along the channel axis. All parts must share n, h, w.
template <typename S>
Tensor<S> concat_channels(std::span<const Tensor<S>> parts);

/// Channels [begin, begin + count) of `x`.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int begin, int count);

/// Stack along the batch axis. All parts must share c, h, w.
template <typename S>
Tensor<S> stack_batch(std::span<const Tensor<S>> parts);

/// Sample `index` of a batch as a tensor with n = 1.
template <typename S>
Tensor<S> batch_item(const Tensor<S>& x, int index);

/// Spatial crop [y, y + hh) x [x, x + ww) of every plane.
template <typename S>
Tensor<S> crop(const Tensor<S>& img, int y, int x, int hh, int ww);

/// Throws DimensionError naming the first axis where `actual` differs.
void require_same_shape(const char* op, const Shape& expected, const Shape& actual);

}  // namespace vsr
