#include "vsr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vsr/parallel.hpp"

namespace vsr {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const RowMat<S>>;

template <typename S>
Graph<S>& graph_of(std::initializer_list<Var<S>> vars) {
  Graph<S>* g = vars.begin()->graph;
  for (const auto& v : vars) {
    if (v.graph != g || g == nullptr) throw Error("ops: inputs belong to different graphs");
  }
  return *g;
}

struct ConvGeom {
  int c_in, h, w, k, stride, pad, oh, ow;
  int patch() const { return c_in * k * k; }
  int pixels() const { return oh * ow; }
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

// col row r = (ci*k + ki)*k + kj, col column = oy*ow + ox.
template <typename S>
void im2col(const S* img, const ConvGeom& g, S* col) {
  for (int ci = 0; ci < g.c_in; ++ci) {
    const S* plane = img + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        S* row = col + static_cast<std::size_t>((ci * g.k + ki) * g.k + kj) * g.pixels();
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          S* dst = row + static_cast<std::size_t>(oy) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, S(0));
            continue;
          }
          const S* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix < 0 || ix >= g.w) ? S(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* col, const ConvGeom& g, S* img) {
  for (int ci = 0; ci < g.c_in; ++ci) {
    S* plane = img + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const S* row = col + static_cast<std::size_t>((ci * g.k + ki) * g.k + kj) * g.pixels();
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const S* src = row + static_cast<std::size_t>(oy) * g.ow;
          S* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_conv_args(const Shape& x, const Shape& w, const Shape& b, int stride, int padding) {
  if (stride < 1) throw DimensionError("conv2d", "stride", 1, stride);
  if (padding < 0) throw DimensionError("conv2d", "padding", 0, padding);
  if (w.c != x.c) throw DimensionError("conv2d", "c", w.c, x.c);
  if (w.h != w.w) throw DimensionError("conv2d", "kernel_w", w.h, w.w);
  if (b.numel() != static_cast<std::size_t>(w.n)) {
    throw DimensionError("conv2d", "bias", w.n, static_cast<long>(b.numel()));
  }
  const int oh = (x.h + 2 * padding - w.h) / stride + 1;
  const int ow = (x.w + 2 * padding - w.w) / stride + 1;
  if (x.h + 2 * padding < w.h || oh < 1) throw DimensionError("conv2d", "h", w.h, x.h + 2 * padding);
  if (x.w + 2 * padding < w.w || ow < 1) throw DimensionError("conv2d", "w", w.w, x.w + 2 * padding);
}

template <typename S>
double accumulate(const S* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(p[i]);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> weight, Var<S> bias, int stride, int padding) {
  Graph<S>& g = graph_of({x, weight, bias});
  const Tensor<S>& in = x.value();
  const Tensor<S>& wt = weight.value();
  const Tensor<S>& bs = bias.value();
  check_conv_args(in.shape(), wt.shape(), bs.shape(), stride, padding);

  const ConvGeom geom{in.c(), in.h(), in.w(), wt.h(), stride, padding,
                      (in.h() + 2 * padding - wt.h()) / stride + 1,
                      (in.w() + 2 * padding - wt.w()) / stride + 1};
  const int c_out = wt.n();
  const int batch = in.n();
  Tensor<S> out({batch, c_out, geom.oh, geom.ow});

  CMapMat<S> wmat(wt.data().data(), c_out, geom.patch());
  parallel_for(static_cast<std::size_t>(batch), [&](std::size_t n) {
    const S* src = in.plane(static_cast<int>(n), 0);
    std::vector<S> col;
    if (!geom.direct()) {
      col.resize(static_cast<std::size_t>(geom.patch()) * geom.pixels());
      im2col(src, geom, col.data());
      src = col.data();
    }
    MapMat<S> omat(out.plane(static_cast<int>(n), 0), c_out, geom.pixels());
    omat.noalias() = wmat * CMapMat<S>(src, geom.patch(), geom.pixels());
    for (int co = 0; co < c_out; ++co) omat.row(co).array() += bs.data()[co];
  });

  auto backward = [geom, c_out, batch](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0], wi = node.inputs[1], bi = node.inputs[2];
    const Tensor<S>& in = gr.value(xi);
    const Tensor<S>& wt = gr.value(wi);
    const S* gout = node.grad.data();
    const std::size_t out_per_item = static_cast<std::size_t>(c_out) * geom.pixels();
    const std::size_t in_per_item = static_cast<std::size_t>(geom.c_in) * geom.h * geom.w;
    const bool need_x = gr.requires_grad(xi);
    const bool need_w = gr.requires_grad(wi);
    const bool need_b = gr.requires_grad(bi);

    if (need_b) {
      std::span<S> db = gr.grad_buffer(bi);
      for (int n = 0; n < batch; ++n) {
        for (int co = 0; co < c_out; ++co) {
          db[co] += static_cast<S>(accumulate(gout + n * out_per_item + co * geom.pixels(),
                                              static_cast<std::size_t>(geom.pixels())));
        }
      }
    }
    if (!need_x && !need_w) return;

    std::vector<RowMat<S>> dw_parts(need_w ? batch : 0);
    S* dx = need_x ? gr.grad_buffer(xi).data() : nullptr;
    CMapMat<S> wmat(wt.data().data(), c_out, geom.patch());
    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t n) {
      CMapMat<S> gmat(gout + n * out_per_item, c_out, geom.pixels());
      const S* src = in.plane(static_cast<int>(n), 0);
      std::vector<S> col;
      if (need_w) {
        if (!geom.direct()) {
          col.resize(static_cast<std::size_t>(geom.patch()) * geom.pixels());
          im2col(src, geom, col.data());
          src = col.data();
        }
        dw_parts[n].noalias() = gmat * CMapMat<S>(src, geom.patch(), geom.pixels()).transpose();
      }
      if (need_x) {
        RowMat<S> dcol = wmat.transpose() * gmat;
        S* dst = dx + n * in_per_item;
        if (geom.direct()) {
          for (std::size_t i = 0; i < in_per_item; ++i) dst[i] += dcol.data()[i];
        } else {
          col2im_add(dcol.data(), geom, dst);
        }
      }
    });
    if (need_w) {
      std::span<S> dw = gr.grad_buffer(wi);
      MapMat<S> dwmat(dw.data(), c_out, geom.patch());
      for (int n = 0; n < batch; ++n) dwmat += dw_parts[n];
    }
  };
  return g.record(OpTag::conv2d, {x, weight, bias}, std::move(out), backward);
}

// ---------------------------------------------------------------------------
// batchnorm

template <typename S>
Var<S> batchnorm(Var<S> x, Var<S> gamma, Var<S> beta, BatchNormStats<S>& stats, BnMode mode,
                 double eps, double momentum) {
  Graph<S>& g = graph_of({x, gamma, beta});
  const Tensor<S>& in = x.value();
  const int C = in.c();
  if (gamma.value().numel() != static_cast<std::size_t>(C)) {
    throw DimensionError("batchnorm", "gamma", C, static_cast<long>(gamma.value().numel()));
  }
  if (beta.value().numel() != static_cast<std::size_t>(C)) {
    throw DimensionError("batchnorm", "beta", C, static_cast<long>(beta.value().numel()));
  }
  if (stats.running_mean.size() != static_cast<std::size_t>(C) ||
      stats.running_var.size() != static_cast<std::size_t>(C)) {
    throw DimensionError("batchnorm", "running_stats", C,
                         static_cast<long>(stats.running_mean.size()));
  }
  const std::size_t plane = in.shape().plane();
  const std::size_t count = static_cast<std::size_t>(in.n()) * plane;
  if (mode == BnMode::train && count < 2) {
    throw DimensionError("batchnorm", "n*h*w", 2, static_cast<long>(count));
  }

  // saved[0] = normalized input xhat, saved[1] = (1, C, 1, 1) inverse std.
  Tensor<S> xhat(in.shape());
  Tensor<S> inv_std({1, C, 1, 1});
  Tensor<S> out(in.shape());
  const S* gm = gamma.value().data().data();
  const S* bt = beta.value().data().data();
  for (int c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == BnMode::train) {
      for (int n = 0; n < in.n(); ++n) mean += accumulate(in.plane(n, c), plane);
      mean /= static_cast<double>(count);
      for (int n = 0; n < in.n(); ++n) {
        const S* p = in.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(count - 1);
      var /= static_cast<double>(count);
      stats.running_mean[c] =
          static_cast<S>((1.0 - momentum) * stats.running_mean[c] + momentum * mean);
      stats.running_var[c] =
          static_cast<S>((1.0 - momentum) * stats.running_var[c] + momentum * unbiased);
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std.data()[c] = static_cast<S>(istd);
    for (int n = 0; n < in.n(); ++n) {
      const S* p = in.plane(n, c);
      S* xh = xhat.plane(n, c);
      S* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = static_cast<S>((static_cast<double>(p[i]) - mean) * istd);
        o[i] = gm[c] * xh[i] + bt[c];
      }
    }
  }

  auto backward = [mode, C, plane, count](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0], gi = node.inputs[1], bi = node.inputs[2];
    const Tensor<S>& xh = node.saved[0];
    const S* istd = node.saved[1].data().data();
    const S* gm = gr.value(gi).data().data();
    const S* gout = node.grad.data();
    const int batch = xh.n();
    for (int c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < batch; ++n) {
        const std::size_t base = xh.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gout[base + i];
          sum_gx += static_cast<double>(gout[base + i]) * xh.data()[base + i];
        }
      }
      if (gr.requires_grad(gi)) gr.grad_buffer(gi)[c] += static_cast<S>(sum_gx);
      if (gr.requires_grad(bi)) gr.grad_buffer(bi)[c] += static_cast<S>(sum_g);
      if (!gr.requires_grad(xi)) continue;
      std::span<S> dx = gr.grad_buffer(xi);
      const double scale = static_cast<double>(gm[c]) * istd[c];
      const double inv_count = 1.0 / static_cast<double>(count);
      for (int n = 0; n < batch; ++n) {
        const std::size_t base = xh.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const double gv = gout[base + i];
          if (mode == BnMode::train) {
            dx[base + i] += static_cast<S>(
                scale * (gv - inv_count * sum_g - xh.data()[base + i] * inv_count * sum_gx));
          } else {
            dx[base + i] += static_cast<S>(scale * gv);
          }
        }
      }
    }
  };
  return g.record(OpTag::batchnorm, {x, gamma, beta}, std::move(out), backward,
                  {std::move(xhat), std::move(inv_std)});
}

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Var<S> relu(Var<S> x) {
  Graph<S>& g = *x.graph;
  Tensor<S> out = x.value();
  for (S& v : out.data()) v = v > S(0) ? v : S(0);
  auto backward = [](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    const auto in = gr.value(xi).data();
    std::span<S> dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (in[i] > S(0)) dx[i] += node.grad[i];
    }
  };
  return g.record(OpTag::relu, {x}, std::move(out), backward);
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
  Graph<S>& g = *x.graph;
  Tensor<S> out = x.value();
  for (S& v : out.data()) v = S(1) / (S(1) + std::exp(-v));
  auto backward = [](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    const auto y = node.value.data();
    std::span<S> dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += node.grad[i] * y[i] * (S(1) - y[i]);
  };
  return g.record(OpTag::sigmoid, {x}, std::move(out), backward);
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Graph<S>& g = graph_of({a, b});
  require_same_shape("add", a.shape(), b.shape());
  Tensor<S> out = a.value();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  auto backward = [](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    for (std::uint32_t in : node.inputs) {
      if (!gr.requires_grad(in)) continue;
      std::span<S> d = gr.grad_buffer(in);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += node.grad[i];
    }
  };
  return g.record(OpTag::add, {a, b}, std::move(out), backward);
}

template <typename S>
Var<S> scale(Var<S> x, double factor) {
  Graph<S>& g = *x.graph;
  Tensor<S> out = x.value();
  const S f = static_cast<S>(factor);
  for (S& v : out.data()) v *= f;
  auto backward = [f](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    std::span<S> dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += f * node.grad[i];
  };
  return g.record(OpTag::scale, {x}, std::move(out), backward);
}

template <typename S>
Var<S> mul_channel(Var<S> x, Var<S> gate) {
  Graph<S>& g = graph_of({x, gate});
  const Tensor<S>& in = x.value();
  const Tensor<S>& gt = gate.value();
  require_same_shape("mul_channel", {in.n(), in.c(), 1, 1}, gt.shape());
  Tensor<S> out(in.shape());
  const std::size_t plane = in.shape().plane();
  for (int n = 0; n < in.n(); ++n) {
    for (int c = 0; c < in.c(); ++c) {
      const S s = gt.at(n, c, 0, 0);
      const S* p = in.plane(n, c);
      S* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] * s;
    }
  }
  auto backward = [plane](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0], gi = node.inputs[1];
    const Tensor<S>& in = gr.value(xi);
    const Tensor<S>& gt = gr.value(gi);
    const S* gout = node.grad.data();
    for (int n = 0; n < in.n(); ++n) {
      for (int c = 0; c < in.c(); ++c) {
        const std::size_t base = in.offset(n, c, 0, 0);
        if (gr.requires_grad(xi)) {
          std::span<S> dx = gr.grad_buffer(xi);
          const S s = gt.at(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) dx[base + i] += gout[base + i] * s;
        }
        if (gr.requires_grad(gi)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            acc += static_cast<double>(gout[base + i]) * in.data()[base + i];
          }
          gr.grad_buffer(gi)[static_cast<std::size_t>(n) * in.c() + c] += static_cast<S>(acc);
        }
      }
    }
  };
  return g.record(OpTag::mul_channel, {x, gate}, std::move(out), backward);
}

template <typename S>
Var<S> global_avg_pool(Var<S> x) {
  Graph<S>& g = *x.graph;
  const Tensor<S>& in = x.value();
  const std::size_t plane = in.shape().plane();
  if (plane == 0) throw DimensionError("global_avg_pool", "h*w", 1, 0);
  Tensor<S> out({in.n(), in.c(), 1, 1});
  for (int n = 0; n < in.n(); ++n) {
    for (int c = 0; c < in.c(); ++c) {
      out.at(n, c, 0, 0) =
          static_cast<S>(accumulate(in.plane(n, c), plane) / static_cast<double>(plane));
    }
  }
  auto backward = [plane](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    std::span<S> dx = gr.grad_buffer(xi);
    const S inv = static_cast<S>(1.0 / static_cast<double>(plane));
    for (std::size_t p = 0; p < node.grad.size(); ++p) {
      const S gv = node.grad[p] * inv;
      for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += gv;
    }
  };
  return g.record(OpTag::global_avg_pool, {x}, std::move(out), backward);
}

// ---------------------------------------------------------------------------
// rearrangements

template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, int r) {
  if (r < 1) throw DimensionError("pixel_shuffle", "r", 1, r);
  if (x.c() % (r * r) != 0) throw DimensionError("pixel_shuffle", "c", r * r, x.c());
  const int c_out = x.c() / (r * r);
  Tensor<S> out({x.n(), c_out, x.h() * r, x.w() * r});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < c_out; ++c) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          const S* src = x.plane(n, c * r * r + i * r + j);
          for (int y = 0; y < x.h(); ++y) {
            for (int xx = 0; xx < x.w(); ++xx) {
              out.at(n, c, y * r + i, xx * r + j) = src[y * x.w() + xx];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> pixel_unshuffle(const Tensor<S>& x, int r) {
  if (r < 1) throw DimensionError("pixel_unshuffle", "r", 1, r);
  if (x.h() % r != 0) throw DimensionError("pixel_unshuffle", "h", r, x.h());
  if (x.w() % r != 0) throw DimensionError("pixel_unshuffle", "w", r, x.w());
  const int h = x.h() / r, w = x.w() / r;
  Tensor<S> out({x.n(), x.c() * r * r, h, w});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          S* dst = out.plane(n, c * r * r + i * r + j);
          for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) dst[y * w + xx] = x.at(n, c, y * r + i, xx * r + j);
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
Var<S> pixel_shuffle(Var<S> x, int r) {
  Graph<S>& g = *x.graph;
  auto backward = [r](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    Tensor<S> gout(node.value.shape(), node.grad);
    const Tensor<S> back = pixel_unshuffle(gout, r);
    std::span<S> dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += back.data()[i];
  };
  return g.record(OpTag::pixel_shuffle, {x}, pixel_shuffle(x.value(), r), backward);
}

template <typename S>
Var<S> pixel_unshuffle(Var<S> x, int r) {
  Graph<S>& g = *x.graph;
  auto backward = [r](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    Tensor<S> gout(node.value.shape(), node.grad);
    const Tensor<S> back = pixel_shuffle(gout, r);
    std::span<S> dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += back.data()[i];
  };
  return g.record(OpTag::pixel_unshuffle, {x}, pixel_unshuffle(x.value(), r), backward);
}

template <typename S>
Var<S> concat_channels(std::span<const Var<S>> parts) {
  if (parts.empty()) throw Error("concat_channels: no parts");
  Graph<S>& g = *parts.front().graph;
  std::vector<Tensor<S>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.graph != &g) throw Error("ops: inputs belong to different graphs");
    values.push_back(p.value());
  }
  Tensor<S> out = concat_channels<S>(std::span<const Tensor<S>>(values));
  auto backward = [](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const Shape os = node.value.shape();
    const std::size_t plane = os.plane();
    int c0 = 0;
    for (std::uint32_t in : node.inputs) {
      const int ci = gr.value(in).c();
      if (gr.requires_grad(in)) {
        std::span<S> d = gr.grad_buffer(in);
        for (int n = 0; n < os.n; ++n) {
          const S* src = node.grad.data() + node.value.offset(n, c0, 0, 0);
          S* dst = d.data() + static_cast<std::size_t>(n) * ci * plane;
          for (std::size_t i = 0; i < ci * plane; ++i) dst[i] += src[i];
        }
      }
      c0 += ci;
    }
  };
  return g.record(OpTag::concat_channels, std::vector<Var<S>>(parts.begin(), parts.end()),
                  std::move(out), backward);
}

template <typename S>
Var<S> slice_channels(Var<S> x, int begin, int count) {
  Graph<S>& g = *x.graph;
  auto backward = [begin, count](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    const Tensor<S>& in = gr.value(xi);
    std::span<S> dx = gr.grad_buffer(xi);
    const std::size_t len = static_cast<std::size_t>(count) * in.shape().plane();
    for (int n = 0; n < in.n(); ++n) {
      const S* src = node.grad.data() + static_cast<std::size_t>(n) * len;
      S* dst = dx.data() + in.offset(n, begin, 0, 0);
      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
    }
  };
  return g.record(OpTag::slice_channels, {x}, slice_channels(x.value(), begin, count), backward);
}

template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, int factor) {
  if (factor < 1) throw DimensionError("upsample_nearest", "factor", 1, factor);
  Tensor<S> out({x.n(), x.c(), x.h() * factor, x.w() * factor});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const S* src = x.plane(n, c);
      S* dst = out.plane(n, c);
      for (int y = 0; y < out.h(); ++y) {
        const S* row = src + static_cast<std::size_t>(y / factor) * x.w();
        S* orow = dst + static_cast<std::size_t>(y) * out.w();
        for (int xx = 0; xx < out.w(); ++xx) orow[xx] = row[xx / factor];
      }
    }
  }
  return out;
}

template <typename S>
Var<S> upsample_nearest(Var<S> x, int factor) {
  Graph<S>& g = *x.graph;
  auto backward = [factor](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    const Tensor<S>& in = gr.value(xi);
    std::span<S> dx = gr.grad_buffer(xi);
    const int ow = in.w() * factor;
    for (int n = 0; n < in.n(); ++n) {
      for (int c = 0; c < in.c(); ++c) {
        const S* src = node.grad.data() + node.value.offset(n, c, 0, 0);
        S* dst = dx.data() + in.offset(n, c, 0, 0);
        for (int y = 0; y < in.h(); ++y) {
          for (int xx = 0; xx < in.w(); ++xx) {
            double acc = 0.0;
            for (int i = 0; i < factor; ++i) {
              const S* row = src + static_cast<std::size_t>(y * factor + i) * ow + xx * factor;
              for (int j = 0; j < factor; ++j) acc += row[j];
            }
            dst[y * in.w() + xx] += static_cast<S>(acc);
          }
        }
      }
    }
  };
  return g.record(OpTag::upsample_nearest, {x}, upsample_nearest(x.value(), factor), backward);
}

// ---------------------------------------------------------------------------
// model-axis ops

template <typename S>
Var<S> softmax_over_models(Var<S> scores, int models) {
  Graph<S>& g = *scores.graph;
  const Tensor<S>& in = scores.value();
  if (models == 0) models = in.n();
  if (models < 1) throw DimensionError("softmax_over_models", "n", 1, models);
  if (in.n() % models != 0) throw DimensionError("softmax_over_models", "n", models, in.n());
  if (in.c() != 1) throw DimensionError("softmax_over_models", "c", 1, in.c());
  const std::size_t plane = in.shape().plane();
  const int groups = in.n() / models;
  Tensor<S> out(in.shape());
  for (int b = 0; b < groups; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      S mx = -std::numeric_limits<S>::infinity();
      for (int k = 0; k < models; ++k) mx = std::max(mx, in.plane(b * models + k, 0)[p]);
      double total = 0.0;
      for (int k = 0; k < models; ++k) {
        const double e = std::exp(static_cast<double>(in.plane(b * models + k, 0)[p] - mx));
        out.plane(b * models + k, 0)[p] = static_cast<S>(e);
        total += e;
      }
      for (int k = 0; k < models; ++k) {
        S& v = out.plane(b * models + k, 0)[p];
        v = static_cast<S>(static_cast<double>(v) / total);
      }
    }
  }
  auto backward = [models, groups, plane](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    const Tensor<S>& y = node.value;
    std::span<S> dx = gr.grad_buffer(xi);
    for (int b = 0; b < groups; ++b) {
      for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int k = 0; k < models; ++k) {
          const std::size_t idx = static_cast<std::size_t>(b * models + k) * plane + p;
          dot += static_cast<double>(y.data()[idx]) * node.grad[idx];
        }
        for (int k = 0; k < models; ++k) {
          const std::size_t idx = static_cast<std::size_t>(b * models + k) * plane + p;
          dx[idx] += static_cast<S>(y.data()[idx] * (node.grad[idx] - dot));
        }
      }
    }
  };
  return g.record(OpTag::softmax_over_models, {scores}, std::move(out), backward);
}

template <typename S>
Var<S> weighted_fuse(Var<S> weights, Var<S> candidates, int models) {
  Graph<S>& g = graph_of({weights, candidates});
  const Tensor<S>& wt = weights.value();
  const Tensor<S>& cd = candidates.value();
  if (models < 1 || cd.n() % models != 0) {
    throw DimensionError("weighted_fuse", "n", models, cd.n());
  }
  require_same_shape("weighted_fuse", {cd.n(), 1, cd.h(), cd.w()}, wt.shape());
  const int groups = cd.n() / models;
  const std::size_t plane = cd.shape().plane();
  Tensor<S> out({groups, cd.c(), cd.h(), cd.w()});
  for (int b = 0; b < groups; ++b) {
    for (int c = 0; c < cd.c(); ++c) {
      S* o = out.plane(b, c);
      for (int k = 0; k < models; ++k) {
        const S* w = wt.plane(b * models + k, 0);
        const S* x = cd.plane(b * models + k, c);
        for (std::size_t p = 0; p < plane; ++p) o[p] += w[p] * x[p];
      }
    }
  }
  auto backward = [models, groups, plane](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t wi = node.inputs[0], ci = node.inputs[1];
    const Tensor<S>& wt = gr.value(wi);
    const Tensor<S>& cd = gr.value(ci);
    const Tensor<S>& out = node.value;
    for (int b = 0; b < groups; ++b) {
      for (int k = 0; k < models; ++k) {
        const int item = b * models + k;
        if (gr.requires_grad(wi)) {
          S* dw = gr.grad_buffer(wi).data() + wt.offset(item, 0, 0, 0);
          for (std::size_t p = 0; p < plane; ++p) {
            double acc = 0.0;
            for (int c = 0; c < cd.c(); ++c) {
              acc += static_cast<double>(node.grad[out.offset(b, c, 0, 0) + p]) *
                     cd.data()[cd.offset(item, c, 0, 0) + p];
            }
            dw[p] += static_cast<S>(acc);
          }
        }
        if (gr.requires_grad(ci)) {
          std::span<S> dc = gr.grad_buffer(ci);
          const S* w = wt.plane(item, 0);
          for (int c = 0; c < cd.c(); ++c) {
            const S* go = node.grad.data() + out.offset(b, c, 0, 0);
            S* d = dc.data() + cd.offset(item, c, 0, 0);
            for (std::size_t p = 0; p < plane; ++p) d[p] += go[p] * w[p];
          }
        }
      }
    }
  };
  return g.record(OpTag::weighted_fuse, {weights, candidates}, std::move(out), backward);
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Var<S> loss(Var<S> pred, Var<S> target, LossKind kind) {
  Graph<S>& g = graph_of({pred, target});
  require_same_shape("loss", pred.shape(), target.shape());
  const auto p = pred.value().data();
  const auto t = target.value().data();
  if (p.empty()) throw DimensionError("loss", "numel", 1, 0);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += kind == LossKind::l1 ? std::abs(d) : d * d;
  }
  Tensor<S> out({1, 1, 1, 1}, static_cast<S>(acc / static_cast<double>(p.size())));
  auto backward = [kind](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t pi = node.inputs[0], ti = node.inputs[1];
    const auto p = gr.value(pi).data();
    const auto t = gr.value(ti).data();
    const double scale = static_cast<double>(node.grad[0]) / static_cast<double>(p.size());
    const bool need_p = gr.requires_grad(pi), need_t = gr.requires_grad(ti);
    S* dp = need_p ? gr.grad_buffer(pi).data() : nullptr;
    S* dt = need_t ? gr.grad_buffer(ti).data() : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - t[i];
      double gv;
      if (kind == LossKind::l1) {
        gv = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
      } else {
        gv = 2.0 * d * scale;
      }
      if (dp) dp[i] += static_cast<S>(gv);
      if (dt) dt[i] -= static_cast<S>(gv);
    }
  };
  return g.record(kind == LossKind::l1 ? OpTag::loss_l1 : OpTag::loss_mse, {pred, target},
                  std::move(out), backward);
}

template <typename S>
Var<S> sum(Var<S> x) {
  Graph<S>& g = *x.graph;
  const auto v = x.value().data();
  Tensor<S> out({1, 1, 1, 1}, static_cast<S>(accumulate(v.data(), v.size())));
  auto backward = [](Graph<S>& gr, std::uint32_t self) {
    const auto& node = gr.node(self);
    const std::uint32_t xi = node.inputs[0];
    if (!gr.requires_grad(xi)) return;
    std::span<S> dx = gr.grad_buffer(xi);
    for (S& d : dx) d += node.grad[0];
  };
  return g.record(OpTag::sum, {x}, std::move(out), backward);
}

// ---------------------------------------------------------------------------

#define VSR_INSTANTIATE(S)                                                                   \
  template Var<S> conv2d<S>(Var<S>, Var<S>, Var<S>, int, int);                               \
  template Var<S> batchnorm<S>(Var<S>, Var<S>, Var<S>, BatchNormStats<S>&, BnMode, double,   \
                               double);                                                      \
  template Var<S> relu<S>(Var<S>);                                                           \
  template Var<S> sigmoid<S>(Var<S>);                                                        \
  template Var<S> pixel_shuffle<S>(Var<S>, int);                                             \
  template Var<S> pixel_unshuffle<S>(Var<S>, int);                                           \
  template Var<S> concat_channels<S>(std::span<const Var<S>>);                               \
  template Var<S> slice_channels<S>(Var<S>, int, int);                                       \
  template Var<S> softmax_over_models<S>(Var<S>, int);                                       \
  template Var<S> upsample_nearest<S>(Var<S>, int);                                          \
  template Var<S> add<S>(Var<S>, Var<S>);                                                    \
  template Var<S> scale<S>(Var<S>, double);                                                  \
  template Var<S> mul_channel<S>(Var<S>, Var<S>);                                            \
  template Var<S> global_avg_pool<S>(Var<S>);                                                \
  template Var<S> weighted_fuse<S>(Var<S>, Var<S>, int);                                     \
  template Var<S> loss<S>(Var<S>, Var<S>, LossKind);                                         \
  template Var<S> sum<S>(Var<S>);                                                            \
  template Tensor<S> pixel_shuffle<S>(const Tensor<S>&, int);                                \
  template Tensor<S> pixel_unshuffle<S>(const Tensor<S>&, int);                              \
  template Tensor<S> upsample_nearest<S>(const Tensor<S>&, int);

VSR_INSTANTIATE(float)
VSR_INSTANTIATE(double)
#undef VSR_INSTANTIATE

}  // namespace vsr
