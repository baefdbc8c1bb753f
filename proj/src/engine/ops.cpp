#include "ffsm/engine/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace ffsm::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

std::string shape_pair(const Shape& a, const Shape& b) { return a.str() + " vs " + b.str(); }

// Unrolls every receptive field of sample `x` ([C,H,W]) into a [C*kh*kw, P]
// column matrix.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t out_h, std::size_t out_w,
            ConvGeometry g, T* col) {
  const std::size_t plane = out_h * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * height * width;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          T* dst = row + oh * out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width))
                          ? T(0)
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kh, std::size_t kw, std::size_t out_h, std::size_t out_w,
                ConvGeometry g, T* dx) {
  const std::size_t plane = out_h * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < channels; ++c) {
    T* dxc = dx + c * height * width;
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = dxc + static_cast<std::size_t>(ih) * width;
          const T* src = row + oh * out_w;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(width)) {
              dst[static_cast<std::size_t>(iw)] += src[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void check_bias(const Tensor<T>* bias, std::size_t channels, std::string_view op) {
  if (bias != nullptr && bias->numel() != channels) {
    throw DimensionError(std::string(op) + ": bias has " + std::to_string(bias->numel()) +
                         " entries, expected " + std::to_string(channels));
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  if (stride == 0) throw GeometryError("stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || padded < kernel) {
    throw GeometryError("window " + std::to_string(kernel) + " exceeds padded extent " +
                        std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

namespace {
thread_local BranchTrace* current_trace = nullptr;

void trace_indices(const std::vector<std::size_t>& winners) {
  if (auto* trace = BranchTrace::active()) {
    for (auto w : winners) trace->mix(w);
  }
}
}  // namespace

BranchTrace::BranchTrace() : previous_(current_trace) { current_trace = this; }
BranchTrace::~BranchTrace() { current_trace = previous_; }
BranchTrace* BranchTrace::active() { return current_trace; }

template <typename T>
void ensure_finite(const Tensor<T>& t, std::string_view op) {
  // x - x is NaN exactly when x is inf or NaN; the sum stays vectorizable.
  const T* p = t.data();
  const std::size_t n = t.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += p[i] - p[i];
  if (acc != T(0)) throw NumericError(std::string(op) + ": non-finite value produced");
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 std::type_identity_t<const Tensor<T>*> bias, ConvGeometry geom) {
  const Shape s = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != s.c) throw DimensionError("conv2d: input/weight channels " + shape_pair(s, ws));
  check_bias(bias, ws.n, "conv2d");
  const std::size_t out_h = conv_out_extent(s.h, ws.h, geom.stride, geom.padding);
  const std::size_t out_w = conv_out_extent(s.w, ws.w, geom.stride, geom.padding);
  const std::size_t k = ws.c * ws.h * ws.w;
  const std::size_t p = out_h * out_w;
  const bool direct = ws.h == 1 && ws.w == 1 && geom.stride == 1 && geom.padding == 0;

  Tensor<T> out(Shape{s.n, ws.n, out_h, out_w});
  std::vector<T> col(direct ? 0 : k * p);
  ConstMatMap<T> w(weight.data(), ws.n, k);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* x = input.data() + n * s.c * s.plane();
    if (!direct) im2col(x, s.c, s.h, s.w, ws.h, ws.w, out_h, out_w, geom, col.data());
    ConstMatMap<T> cols(direct ? x : col.data(), k, p);
    MatMap<T> y(out.data() + n * ws.n * p, ws.n, p);
    y.noalias() = w * cols;
    if (bias != nullptr) {
      for (std::size_t o = 0; o < ws.n; ++o) y.row(o).array() += (*bias)[o];
    }
  }
  ensure_finite(out, "conv2d");

  const bool with_bias = bias != nullptr;
  if (tape.wants(input, weight) || (with_bias && tape.wants(*bias))) {
    Tensor<T> b = with_bias ? *bias : Tensor<T>();
    std::vector<Tensor<T>> inputs{input, weight};
    if (with_bias) inputs.push_back(b);
    tape.record("conv2d", out, inputs, [=]() mutable {
      Tensor<T> x_t = input, w_t = weight, y_t = out;
      std::vector<T> cbuf(direct ? 0 : k * p);
      std::vector<T> dcol(k * p);
      ConstMatMap<T> wm(w_t.data(), ws.n, k);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* x = x_t.data() + n * s.c * s.plane();
        ConstMatMap<T> dy(y_t.grad().data() + n * ws.n * p, ws.n, p);
        if (w_t.tracked()) {
          if (!direct) im2col(x, s.c, s.h, s.w, ws.h, ws.w, out_h, out_w, geom, cbuf.data());
          ConstMatMap<T> cols(direct ? x : cbuf.data(), k, p);
          MatMap<T> dw(w_t.ensure_grad().data(), ws.n, k);
          dw.noalias() += dy * cols.transpose();
        }
        if (x_t.tracked()) {
          T* dx = x_t.ensure_grad().data() + n * s.c * s.plane();
          if (direct) {
            MatMap<T> dxm(dx, k, p);
            dxm.noalias() += wm.transpose() * dy;
          } else {
            MatMap<T> dc(dcol.data(), k, p);
            dc.noalias() = wm.transpose() * dy;
            col2im_add(dcol.data(), s.c, s.h, s.w, ws.h, ws.w, out_h, out_w, geom, dx);
          }
        }
        if (with_bias && b.tracked()) {
          auto db = b.ensure_grad();
          for (std::size_t o = 0; o < ws.n; ++o) db[o] += dy.row(o).sum();
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                           ConvGeometry geom) {
  const Shape s = input.shape();
  const Shape ws = weight.shape();
  if (ws.n != s.c || ws.c != 1) {
    throw DimensionError("depthwise_conv2d: expected weight [" + std::to_string(s.c) +
                         ",1,k,k], got " + ws.str());
  }
  const std::size_t out_h = conv_out_extent(s.h, ws.h, geom.stride, geom.padding);
  const std::size_t out_w = conv_out_extent(s.w, ws.w, geom.stride, geom.padding);
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});

  // Visits every (output, input, kernel) triple that lies inside the grid.
  auto sweep = [=](auto&& visit) {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t in_base = (n * s.c + c) * s.plane();
        const std::size_t out_base = (n * s.c + c) * out_h * out_w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          for (std::size_t ki = 0; ki < ws.h; ++ki) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * geom.stride + ki) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kj = 0; kj < ws.w; ++kj) {
              const std::size_t widx = (c * ws.h + ki) * ws.w + kj;
              for (std::size_t ow = 0; ow < out_w; ++ow) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * geom.stride + kj) - pad;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.w)) continue;
                visit(out_base + oh * out_w + ow,
                      in_base + static_cast<std::size_t>(ih) * s.w + static_cast<std::size_t>(iw),
                      widx);
              }
            }
          }
        }
      }
    }
  };

  {
    T* y = out.data();
    const T* x = input.data();
    const T* w = weight.data();
    sweep([&](std::size_t yi, std::size_t xi, std::size_t wi) { y[yi] += w[wi] * x[xi]; });
  }
  ensure_finite(out, "depthwise_conv2d");

  if (tape.wants(input, weight)) {
    tape.record("depthwise_conv2d", out, {input, weight}, [=]() mutable {
      Tensor<T> x_t = input, w_t = weight, y_t = out;
      const T* dy = y_t.grad().data();
      const T* x = x_t.data();
      const T* w = w_t.data();
      T* dx = x_t.tracked() ? x_t.ensure_grad().data() : nullptr;
      T* dw = w_t.tracked() ? w_t.ensure_grad().data() : nullptr;
      sweep([&](std::size_t yi, std::size_t xi, std::size_t wi) {
        if (dx != nullptr) dx[xi] += w[wi] * dy[yi];
        if (dw != nullptr) dw[wi] += x[xi] * dy[yi];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> pointwise_conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight) {
  const Shape ws = weight.shape();
  if (ws.h != 1 || ws.w != 1) {
    throw DimensionError("pointwise_conv2d: expected a 1x1 kernel, got " + ws.str());
  }
  return conv2d(tape, input, weight, static_cast<const Tensor<T>*>(nullptr), {});
}

template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window,
                     std::size_t stride, std::size_t padding) {
  const Shape s = input.shape();
  if (window > s.h + 2 * padding || window > s.w + 2 * padding) {
    throw GeometryError("max_pool2d: window " + std::to_string(window) + " larger than input " +
                        s.str());
  }
  if (padding >= window) throw GeometryError("max_pool2d: padding must be smaller than window");
  const std::size_t out_h = conv_out_extent(s.h, window, stride, padding);
  const std::size_t out_w = conv_out_extent(s.w, window, stride, padding);
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  std::vector<std::size_t> argmax(out.numel());
  const T* x = input.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = nc * s.plane();
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = base;
        for (std::size_t ki = 0; ki < window; ++ki) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t kj = 0; kj < window; ++kj) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const std::size_t i =
                base + static_cast<std::size_t>(ih) * s.w + static_cast<std::size_t>(iw);
            if (x[i] > best) {
              best = x[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = (nc * out_h + oh) * out_w + ow;
        out[o] = best;
        argmax[o] = best_i;
      }
    }
  }
  ensure_finite(out, "max_pool2d");
  trace_indices(argmax);
  if (tape.wants(input)) {
    tape.record("max_pool2d", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& input, std::size_t window,
                     std::size_t stride) {
  const Shape s = input.shape();
  if (window > s.h || window > s.w) {
    throw GeometryError("avg_pool2d: window " + std::to_string(window) + " larger than input " +
                        s.str());
  }
  const std::size_t out_h = conv_out_extent(s.h, window, stride, 0);
  const std::size_t out_w = conv_out_extent(s.w, window, stride, 0);
  const double inv = 1.0 / static_cast<double>(window * window);
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  const T* x = input.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* xp = x + nc * s.plane();
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        double acc = 0.0;
        for (std::size_t ki = 0; ki < window; ++ki) {
          for (std::size_t kj = 0; kj < window; ++kj) {
            acc += xp[(oh * stride + ki) * s.w + ow * stride + kj];
          }
        }
        out[(nc * out_h + oh) * out_w + ow] = static_cast<T>(acc * inv);
      }
    }
  }
  ensure_finite(out, "avg_pool2d");
  if (tape.wants(input)) {
    tape.record("avg_pool2d", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        T* dxp = dx.data() + nc * s.plane();
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const T g = static_cast<T>(dy[(nc * out_h + oh) * out_w + ow] * inv);
            for (std::size_t ki = 0; ki < window; ++ki) {
              for (std::size_t kj = 0; kj < window; ++kj) {
                dxp[(oh * stride + ki) * s.w + ow * stride + kj] += g;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  const Shape s = input.shape();
  if (s.plane() == 0) throw GeometryError("global_avg_pool: empty spatial extent");
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* xp = input.data() + nc * s.plane();
    double acc = 0.0;
    for (std::size_t i = 0; i < s.plane(); ++i) acc += xp[i];
    out[nc] = static_cast<T>(acc * inv);
  }
  ensure_finite(out, "global_avg_pool");
  if (tape.wants(input)) {
    tape.record("global_avg_pool", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        const T g = static_cast<T>(dy[nc] * inv);
        T* dxp = dx.data() + nc * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) dxp[i] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_max_pool(Tape<T>& tape, const Tensor<T>& input) {
  const Shape s = input.shape();
  if (s.plane() == 0) throw GeometryError("global_max_pool: empty spatial extent");
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  std::vector<std::size_t> argmax(s.n * s.c);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* xp = input.data() + nc * s.plane();
    const std::size_t i = static_cast<std::size_t>(std::max_element(xp, xp + s.plane()) - xp);
    out[nc] = xp[i];
    argmax[nc] = nc * s.plane() + i;
  }
  ensure_finite(out, "global_max_pool");
  trace_indices(argmax);
  if (tape.wants(input)) {
    tape.record("global_max_pool", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t nc = 0; nc < argmax.size(); ++nc) dx[argmax[nc]] += dy[nc];
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_mean(Tape<T>& tape, const Tensor<T>& input) {
  const Shape s = input.shape();
  if (s.c == 0) throw DimensionError("channel_mean: no channels");
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const double inv = 1.0 / static_cast<double>(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) acc += input[(n * s.c + c) * s.plane() + i];
      out[n * s.plane() + i] = static_cast<T>(acc * inv);
    }
  }
  ensure_finite(out, "channel_mean");
  if (tape.wants(input)) {
    tape.record("channel_mean", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          for (std::size_t i = 0; i < s.plane(); ++i) {
            dx[(n * s.c + c) * s.plane() + i] += static_cast<T>(dy[n * s.plane() + i] * inv);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_max(Tape<T>& tape, const Tensor<T>& input) {
  const Shape s = input.shape();
  if (s.c == 0) throw DimensionError("channel_max: no channels");
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      std::size_t best = n * s.c * s.plane() + i;
      for (std::size_t c = 1; c < s.c; ++c) {
        const std::size_t j = (n * s.c + c) * s.plane() + i;
        if (input[j] > input[best]) best = j;
      }
      out[n * s.plane() + i] = input[best];
      argmax[n * s.plane() + i] = best;
    }
  }
  ensure_finite(out, "channel_max");
  trace_indices(argmax);
  if (tape.wants(input)) {
    tape.record("channel_max", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                std::type_identity_t<const Tensor<T>*> bias) {
  const Shape s = input.shape();
  const Shape ws = weight.shape();
  const std::size_t in_features = s.c * s.h * s.w;
  const std::size_t out_features = ws.n;
  if (ws.c * ws.h * ws.w != in_features) {
    throw DimensionError("dense: input features " + std::to_string(in_features) +
                         " do not match weight " + ws.str());
  }
  check_bias(bias, out_features, "dense");
  Tensor<T> out(Shape{s.n, out_features, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* x = input.data() + n * in_features;
    for (std::size_t o = 0; o < out_features; ++o) {
      const T* w = weight.data() + o * in_features;
      double acc = bias != nullptr ? static_cast<double>((*bias)[o]) : 0.0;
      for (std::size_t i = 0; i < in_features; ++i) acc += static_cast<double>(w[i]) * x[i];
      out[n * out_features + o] = static_cast<T>(acc);
    }
  }
  ensure_finite(out, "dense");

  const bool with_bias = bias != nullptr;
  if (tape.wants(input, weight) || (with_bias && tape.wants(*bias))) {
    Tensor<T> b = with_bias ? *bias : Tensor<T>();
    std::vector<Tensor<T>> inputs{input, weight};
    if (with_bias) inputs.push_back(b);
    tape.record("dense", out, inputs, [=]() mutable {
      Tensor<T> x_t = input, w_t = weight, y_t = out;
      auto dy = y_t.grad();
      if (x_t.tracked()) {
        auto dx = x_t.ensure_grad();
        for (std::size_t n = 0; n < s.n; ++n) {
          for (std::size_t i = 0; i < in_features; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < out_features; ++o) {
              acc += static_cast<double>(dy[n * out_features + o]) * w_t[o * in_features + i];
            }
            dx[n * in_features + i] += static_cast<T>(acc);
          }
        }
      }
      if (w_t.tracked()) {
        auto dw = w_t.ensure_grad();
        for (std::size_t o = 0; o < out_features; ++o) {
          for (std::size_t i = 0; i < in_features; ++i) {
            double acc = 0.0;
            for (std::size_t n = 0; n < s.n; ++n) {
              acc += static_cast<double>(dy[n * out_features + o]) * x_t[n * in_features + i];
            }
            dw[o * in_features + i] += static_cast<T>(acc);
          }
        }
      }
      if (with_bias && b.tracked()) {
        auto db = b.ensure_grad();
        for (std::size_t o = 0; o < out_features; ++o) {
          double acc = 0.0;
          for (std::size_t n = 0; n < s.n; ++n) acc += dy[n * out_features + o];
          db[o] += static_cast<T>(acc);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  {
    const T* x = input.data();
    T* y = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) y[i] = x[i] <= T(0) ? T(0) : x[i];  // NaN passes through and is caught below
  }
  ensure_finite(out, "relu");
  if (auto* trace = BranchTrace::active()) {
    const T* x = input.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) trace->mix(x[i] > T(0) ? i : ~i);
  }
  if (tape.wants(input)) {
    tape.record("relu", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      T* dx = x_t.ensure_grad().data();
      const T* dy = y_t.grad().data();
      const T* x = x_t.data();
      for (std::size_t i = 0, n = x_t.numel(); i < n; ++i) dx[i] += x[i] > T(0) ? dy[i] : T(0);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T x = input[i];
    if (x >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
  ensure_finite(out, "sigmoid");
  if (tape.wants(input)) {
    tape.record("sigmoid", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      auto dy = y_t.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y_t[i] * (T(1) - y_t[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch " + shape_pair(a.shape(), b.shape()));
  Tensor<T> out(a.shape());
  {
    const T* x = a.data();
    const T* z = b.data();
    T* y = out.data();
    for (std::size_t i = 0, n = out.numel(); i < n; ++i) y[i] = x[i] + z[i];
  }
  ensure_finite(out, "add");
  if (tape.wants(a, b)) {
    tape.record("add", out, {a, b}, [=]() mutable {
      Tensor<T> a_t = a, b_t = b, y_t = out;
      auto dy = y_t.grad();
      for (Tensor<T>* t : {&a_t, &b_t}) {
        if (!t->tracked()) continue;
        T* d = t->ensure_grad().data();
        for (std::size_t i = 0, n = dy.size(); i < n; ++i) d[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_broadcast(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  auto merge = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError("mul_broadcast: cannot broadcast " + shape_pair(sa, sb));
  };
  const Shape so{merge(sa.n, sb.n), merge(sa.c, sb.c), merge(sa.h, sb.h), merge(sa.w, sb.w)};
  // Element strides with zero on broadcast axes.
  auto strides = [](const Shape& s) {
    return std::array<std::size_t, 4>{s.n == 1 ? 0 : s.c * s.h * s.w, s.c == 1 ? 0 : s.h * s.w,
                                      s.h == 1 ? 0 : s.w, s.w == 1 ? std::size_t{0} : std::size_t{1}};
  };
  const auto st_a = strides(sa);
  const auto st_b = strides(sb);
  auto sweep = [=](auto&& visit) {
    std::size_t o = 0;
    for (std::size_t n = 0; n < so.n; ++n)
      for (std::size_t c = 0; c < so.c; ++c)
        for (std::size_t h = 0; h < so.h; ++h)
          for (std::size_t w = 0; w < so.w; ++w, ++o) {
            visit(o, n * st_a[0] + c * st_a[1] + h * st_a[2] + w * st_a[3],
                  n * st_b[0] + c * st_b[1] + h * st_b[2] + w * st_b[3]);
          }
  };
  Tensor<T> out(so);
  sweep([&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = a[ia] * b[ib]; });
  ensure_finite(out, "mul_broadcast");
  if (tape.wants(a, b)) {
    tape.record("mul_broadcast", out, {a, b}, [=]() mutable {
      Tensor<T> a_t = a, b_t = b, y_t = out;
      auto dy = y_t.grad();
      T* da = a_t.tracked() ? a_t.ensure_grad().data() : nullptr;
      T* db = b_t.tracked() ? b_t.ensure_grad().data() : nullptr;
      sweep([&](std::size_t o, std::size_t ia, std::size_t ib) {
        if (da != nullptr) da[ia] += dy[o] * b_t[ib];
        if (db != nullptr) db[ib] += dy[o] * a_t[ia];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw DimensionError("concat_channels: N/H/W mismatch " + shape_pair(sa, sb));
  }
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t chunk_a = sa.c * sa.plane();
  const std::size_t chunk_b = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    T* dst = out.data() + n * (chunk_a + chunk_b);
    std::copy_n(a.data() + n * chunk_a, chunk_a, dst);
    std::copy_n(b.data() + n * chunk_b, chunk_b, dst + chunk_a);
  }
  if (tape.wants(a, b)) {
    tape.record("concat_channels", out, {a, b}, [=]() mutable {
      Tensor<T> a_t = a, b_t = b, y_t = out;
      auto dy = y_t.grad();
      for (std::size_t n = 0; n < sa.n; ++n) {
        const T* src = dy.data() + n * (chunk_a + chunk_b);
        if (a_t.tracked()) {
          T* d = a_t.ensure_grad().data() + n * chunk_a;
          for (std::size_t i = 0; i < chunk_a; ++i) d[i] += src[i];
        }
        if (b_t.tracked()) {
          T* d = b_t.ensure_grad().data() + n * chunk_b;
          for (std::size_t i = 0; i < chunk_b; ++i) d[i] += src[chunk_a + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                     BatchNormOptions options) {
  const Shape s = input.shape();
  for (const Tensor<T>* t : std::array<const Tensor<T>*, 4>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != s.c) {
      throw DimensionError("batch_norm: per-channel tensor " + t->shape().str() +
                           " does not match input " + s.str());
    }
  }
  const std::size_t count = s.n * s.plane();
  if (count == 0) throw GeometryError("batch_norm: empty input");
  std::vector<T> normalized(s.numel());
  std::vector<double> inv_std(s.c);
  Tensor<T> out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (options.training) {
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* xp = input.data() + (n * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) mean += xp[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* xp = input.data() + (n * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = xp[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      running_mean[c] = static_cast<T>(options.momentum * running_mean[c] +
                                       (1.0 - options.momentum) * mean);
      running_var[c] = static_cast<T>(options.momentum * running_var[c] +
                                      (1.0 - options.momentum) * var);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + options.epsilon);
    const T mu = static_cast<T>(mean);
    const T is = static_cast<T>(inv_std[c]);
    const T g = gamma[c];
    const T b = beta[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * s.plane();
      const T* xp = input.data() + base;
      T* np = normalized.data() + base;
      T* yp = out.data() + base;
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const T xhat = (xp[i] - mu) * is;
        np[i] = xhat;
        yp[i] = g * xhat + b;
      }
    }
  }
  ensure_finite(out, "batch_norm");

  if (tape.wants(input, gamma, beta)) {
    const bool training = options.training;
    tape.record("batch_norm", out, {input, gamma, beta}, [=]() mutable {
      Tensor<T> x_t = input, g_t = gamma, b_t = beta, y_t = out;
      const T* dy = y_t.grad().data();
      for (std::size_t c = 0; c < s.c; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t base = (n * s.c + c) * s.plane();
          const T* dp = dy + base;
          const T* np = normalized.data() + base;
          for (std::size_t i = 0; i < s.plane(); ++i) {
            sum_dy += dp[i];
            sum_dy_xhat += static_cast<double>(dp[i]) * np[i];
          }
        }
        if (g_t.tracked()) g_t.ensure_grad()[c] += static_cast<T>(sum_dy_xhat);
        if (b_t.tracked()) b_t.ensure_grad()[c] += static_cast<T>(sum_dy);
        if (!x_t.tracked()) continue;
        T* dx = x_t.ensure_grad().data();
        const double m = static_cast<double>(count);
        const T scale = static_cast<T>(g_t[c] * inv_std[c]);
        const T mean_dy = training ? static_cast<T>(sum_dy / m) : T(0);
        const T mean_dy_xhat = training ? static_cast<T>(sum_dy_xhat / m) : T(0);
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t base = (n * s.c + c) * s.plane();
          const T* dp = dy + base;
          const T* np = normalized.data() + base;
          T* xp = dx + base;
          for (std::size_t i = 0; i < s.plane(); ++i) {
            xp[i] += scale * (dp[i] - mean_dy - np[i] * mean_dy_xhat);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bce_loss(Tape<T>& tape, const Tensor<T>& pred, std::span<const T> targets) {
  if (pred.numel() != targets.size()) {
    throw DimensionError("bce_loss: " + std::to_string(pred.numel()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw ValueError("bce_loss: empty batch");
  std::vector<T> y(targets.begin(), targets.end());
  for (T t : y) {
    if (t != T(0) && t != T(1)) throw ValueError("bce_loss: target outside {0,1}");
  }
  const double lo = kBceEpsilon;
  const double hi = 1.0 - kBceEpsilon;
  const double inv_n = 1.0 / static_cast<double>(y.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred[i]), lo, hi);
    acc -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc * inv_n));
  ensure_finite(out, "bce_loss");
  if (tape.wants(pred)) {
    tape.record("bce_loss", out, {pred}, [=]() mutable {
      Tensor<T> p_t = pred, y_t = out;
      auto dp = p_t.ensure_grad();
      const double g = y_t.grad()[0] * inv_n;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = p_t[i];
        if (p <= lo || p >= hi) continue;  // clamped region is flat
        dp[i] += static_cast<T>(g * (-y[i] / p + (1.0 - y[i]) / (1.0 - p)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  double acc = 0.0;
  for (T v : input.values()) acc += v;
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc));
  ensure_finite(out, "sum");
  if (tape.wants(input)) {
    tape.record("sum", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      const T g = y_t.grad()[0];
      for (auto& d : dx) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& input, std::span<const T> weights) {
  if (weights.size() != input.numel()) {
    throw DimensionError("weighted_sum: weight count does not match input " + input.shape().str());
  }
  std::vector<T> w(weights.begin(), weights.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += static_cast<double>(input[i]) * w[i];
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc));
  ensure_finite(out, "weighted_sum");
  if (tape.wants(input)) {
    tape.record("weighted_sum", out, {input}, [=]() mutable {
      Tensor<T> x_t = input, y_t = out;
      auto dx = x_t.ensure_grad();
      const T g = y_t.grad()[0];
      for (std::size_t i = 0; i < w.size(); ++i) dx[i] += g * w[i];
    });
  }
  return out;
}

#define FFSM_INSTANTIATE_OPS(T)                                                                 \
  template void ensure_finite<T>(const Tensor<T>&, std::string_view);                          \
  template Tensor<T> conv2d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::type_identity_t<const Tensor<T>*>, \
                               ConvGeometry);                                                  \
  template Tensor<T> depthwise_conv2d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                         ConvGeometry);                                        \
  template Tensor<T> pointwise_conv2d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> max_pool2d<T>(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t,       \
                                   std::size_t);                                               \
  template Tensor<T> avg_pool2d<T>(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> global_avg_pool<T>(Tape<T>&, const Tensor<T>&);                           \
  template Tensor<T> global_max_pool<T>(Tape<T>&, const Tensor<T>&);                           \
  template Tensor<T> channel_mean<T>(Tape<T>&, const Tensor<T>&);                              \
  template Tensor<T> channel_max<T>(Tape<T>&, const Tensor<T>&);                               \
  template Tensor<T> dense<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::type_identity_t<const Tensor<T>*>); \
  template Tensor<T> relu<T>(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sigmoid<T>(Tape<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul_broadcast<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> concat_channels<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> batch_norm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                   const Tensor<T>&, Tensor<T>&, Tensor<T>&, BatchNormOptions); \
  template Tensor<T> bce_loss<T>(Tape<T>&, const Tensor<T>&, std::span<const T>);              \
  template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&);                                       \
  template Tensor<T> weighted_sum<T>(Tape<T>&, const Tensor<T>&, std::span<const T>);

FFSM_INSTANTIATE_OPS(float)
FFSM_INSTANTIATE_OPS(double)

#undef FFSM_INSTANTIATE_OPS

}  // namespace ffsm::ops
