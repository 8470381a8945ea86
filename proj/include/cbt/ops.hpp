#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "cbt/graph.hpp"
#include "cbt/kernels.hpp"

// Differentiable tensor operations recorded on a Graph. Each op computes its
// forward value and, when an input requires a gradient, registers the adjoint.
namespace cbt::ops {

namespace detail {

// Double-precision accumulator matching the scalar kind.
template <class T>
using Acc = std::conditional_t<is_dual_v<T>, Dual<double>, double>;

template <class T>
Acc<T> widen(const T& x) {
  if constexpr (is_dual_v<T>) return Acc<T>(x.v, x.t); else return static_cast<double>(x);
}
template <class T>
T narrow(const Acc<T>& x) {
  using U = real_of_t<T>;
  if constexpr (is_dual_v<T>) return T(static_cast<U>(x.v), static_cast<U>(x.t)); else return static_cast<T>(x);
}

// Wide-accumulated sum of p[0..n) and of p[i] * q[i].
template <class T>
Acc<T> sum_wide(const T* p, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    return Eigen::Map<const Eigen::VectorXf>(p, static_cast<Eigen::Index>(n)).template cast<double>().sum();
  } else {
    Acc<T> s{};
    for (std::size_t i = 0; i < n; ++i) s += widen(p[i]);
    return s;
  }
}
template <class T>
Acc<T> dot_wide(const T* p, const T* q, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    const auto n_ = static_cast<Eigen::Index>(n);
    return Eigen::Map<const Eigen::VectorXf>(p, n_).template cast<double>().dot(
        Eigen::Map<const Eigen::VectorXf>(q, n_).template cast<double>());
  } else {
    Acc<T> s{};
    for (std::size_t i = 0; i < n; ++i) s += widen(T(p[i] * q[i]));
    return s;
  }
}

template <class T>
bool any_requires(const Graph<T>& g, std::initializer_list<Var> vs) {
  if (!g.recording()) return false;
  for (Var v : vs)
    if (v.valid() && g.requires_grad(v)) return true;
  return false;
}

// Records `out`; attaches `backward` only when some input needs a gradient.
template <class T, class F>
Var emit(Graph<T>& g, Tensor<T> out, std::initializer_list<Var> inputs, F&& backward) {
  if (!any_requires(g, inputs)) return g.constant(std::move(out));
  return g.push(std::move(out), true, std::forward<F>(backward));
}

inline void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void check_rank(const Shape& a, std::size_t r, const char* op) {
  if (a.size() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a));
}

template <class T>
T sigmoid(const T& x) {
  using std::exp;
  return T(1) / (T(1) + exp(-x));
}

}  // namespace detail

using detail::emit;

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::check_same(av.shape(), bv.shape(), "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return emit(g, std::move(out), {a, b}, [&g, a, b](const Tensor<T>& go) {
    for (Var in : {a, b}) {
      if (!g.requires_grad(in)) continue;
      auto& gi = g.grad_buffer(in);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::check_same(av.shape(), bv.shape(), "sub");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return emit(g, std::move(out), {a, b}, [&g, a, b](const Tensor<T>& go) {
    if (g.requires_grad(a)) {
      auto& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::check_same(av.shape(), bv.shape(), "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return emit(g, std::move(out), {a, b}, [&g, a, b](const Tensor<T>& go) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& ga = g.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad_buffer(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, double k) {
  const auto& av = g.value(a);
  const T kk = T(static_cast<real_of_t<T>>(k));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * kk;
  return emit(g, std::move(out), {a}, [&g, a, kk](const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * kk;
  });
}

template <class T>
Var leaky_relu(Graph<T>& g, Var a, double slope = 0.2) {
  const auto& av = g.value(a);
  const T s = T(static_cast<real_of_t<T>>(slope));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : av[i] * s;
  return emit(g, std::move(out), {a}, [&g, a, s](const Tensor<T>& go) {
    const auto& av = g.value(a);
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += av[i] > T(0) ? go[i] : go[i] * s;
  });
}

template <class T>
Var relu(Graph<T>& g, Var a) {
  return leaky_relu(g, a, 0.0);
}

template <class T>
Var tanh(Graph<T>& g, Var a) {
  using std::tanh;
  const auto& av = g.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tanh(av[i]);
  const Var self = g.next_var();
  return emit(g, std::move(out), {a}, [&g, a, self](const Tensor<T>& go) {
    const auto& yv = g.value(self);
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (T(1) - yv[i] * yv[i]);
  });
}

// log(1 + e^x), evaluated stably.
template <class T>
Var softplus(Graph<T>& g, Var a) {
  using std::abs;
  using std::exp;
  using std::log1p;
  const auto& av = g.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    out[i] = (x > T(0) ? x : T(0)) + log1p(exp(-abs(x)));
  }
  return emit(g, std::move(out), {a}, [&g, a](const Tensor<T>& go) {
    const auto& av = g.value(a);
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * detail::sigmoid(av[i]);
  });
}

template <class T>
Var abs(Graph<T>& g, Var a) {
  using std::abs;
  const auto& av = g.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = abs(av[i]);
  return emit(g, std::move(out), {a}, [&g, a](const Tensor<T>& go) {
    const auto& av = g.value(a);
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (av[i] > T(0)) ga[i] += go[i];
      else if (av[i] < T(0)) ga[i] -= go[i];
    }
  });
}

template <class T>
Var square(Graph<T>& g, Var a) {
  const auto& av = g.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  return emit(g, std::move(out), {a}, [&g, a](const Tensor<T>& go) {
    const auto& av = g.value(a);
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * T(2) * av[i];
  });
}

// Mean over every element; result has shape [1].
template <class T>
Var mean(Graph<T>& g, Var a) {
  const auto& av = g.value(a);
  const auto acc = detail::sum_wide(av.data(), av.size());
  const double n = static_cast<double>(av.size());
  Tensor<T> out(Shape{1}, detail::narrow<T>(acc / detail::Acc<T>(n)));
  return emit(g, std::move(out), {a}, [&g, a, n](const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    const T d = go[0] / T(static_cast<real_of_t<T>>(n));
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
  });
}

template <class T>
Var sum(Graph<T>& g, Var a) {
  const auto& av = g.value(a);
  const auto acc = detail::sum_wide(av.data(), av.size());
  Tensor<T> out(Shape{1}, detail::narrow<T>(acc));
  return emit(g, std::move(out), {a}, [&g, a](const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[0];
  });
}

template <class T>
Var reshape(Graph<T>& g, Var a, Shape s) {
  Tensor<T> out = g.value(a).reshaped(std::move(s));
  return emit(g, std::move(out), {a}, [&g, a](const Tensor<T>& go) {
    auto& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

// [N, ...] -> [N, prod(...)]
template <class T>
Var flatten(Graph<T>& g, Var a) {
  const auto& s = g.value(a).shape();
  const int n = s.at(0);
  return reshape(g, a, Shape{n, static_cast<int>(g.value(a).size() / static_cast<std::size_t>(n))});
}

// Stride-1 2-D convolution. x: [N, Ci, H, W], w: [Co, Ci, k, k], b: [Co] or invalid.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int pad) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  detail::check_rank(xv.shape(), 4, "conv2d input");
  detail::check_rank(wv.shape(), 4, "conv2d weight");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != ci || wv.dim(3) != k)
    throw DimensionError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
  const int ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
  if (ho <= 0 || wo <= 0) throw DimensionError("conv2d: kernel larger than padded input " + shape_str(xv.shape()));
  const int rows = ci * k * k, cols = ho * wo;
  const bool direct = (k == 1 && pad == 0);
  const std::size_t col_size = static_cast<std::size_t>(rows) * cols;
  const std::size_t in_size = static_cast<std::size_t>(ci) * h * wd;
  const std::size_t out_size = static_cast<std::size_t>(co) * cols;

  std::vector<T> col(direct ? 0 : col_size * n);
  Tensor<T> out(Shape{n, co, ho, wo});
  for (int s = 0; s < n; ++s) {
    const T* src = xv.data() + in_size * s;
    if (!direct) {
      kernels::im2col(src, ci, h, wd, k, pad, col.data() + col_size * s);
      src = col.data() + col_size * s;
    }
    T* dst = out.data() + out_size * s;
    kernels::gemm<T>(false, false, co, cols, rows, wv.data(), src, dst, false);
    if (b.valid()) {
      const auto& bv = g.value(b);
      for (int c = 0; c < co; ++c)
        for (int p = 0; p < cols; ++p) dst[static_cast<std::size_t>(c) * cols + p] += bv[c];
    }
  }
  return emit(g, std::move(out), {x, w, b},
              [&g, x, w, b, n, ci, h, wd, co, k, pad, rows, cols, direct, col_size, in_size, out_size,
               col = std::move(col)](const Tensor<T>& go) {
                const auto& xv = g.value(x);
                const auto& wv = g.value(w);
                const bool need_x = g.requires_grad(x), need_w = g.requires_grad(w),
                           need_b = b.valid() && g.requires_grad(b);
                std::vector<T> dcol(direct ? 0 : col_size);
                for (int s = 0; s < n; ++s) {
                  const T* gos = go.data() + out_size * s;
                  const T* cs = direct ? xv.data() + in_size * s : col.data() + col_size * s;
                  if (need_w) kernels::gemm<T>(false, true, co, rows, cols, gos, cs, g.grad_buffer(w).data(), true);
                  if (need_b) {
                    auto& gb = g.grad_buffer(b);
                    for (int c = 0; c < co; ++c) {
                      gb[c] += detail::narrow<T>(detail::sum_wide(gos + static_cast<std::size_t>(c) * cols, cols));
                    }
                  }
                  if (need_x) {
                    T* gx = g.grad_buffer(x).data() + in_size * s;
                    if (direct) {
                      kernels::gemm<T>(true, false, rows, cols, co, wv.data(), gos, gx, true);
                    } else {
                      kernels::gemm<T>(true, false, rows, cols, co, wv.data(), gos, dcol.data(), false);
                      kernels::col2im(dcol.data(), ci, h, wd, k, pad, gx);
                    }
                  }
                }
              });
}

// x: [N, I], w: [O, I], b: [O] or invalid -> [N, O]
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  detail::check_rank(xv.shape(), 2, "linear input");
  const int n = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
  if (wv.dim(1) != in)
    throw DimensionError("linear: weight " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
  Tensor<T> out(Shape{n, outd});
  kernels::gemm<T>(false, true, n, outd, in, xv.data(), wv.data(), out.data(), false);
  if (b.valid()) {
    const auto& bv = g.value(b);
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < outd; ++o) out[static_cast<std::size_t>(i) * outd + o] += bv[o];
  }
  return emit(g, std::move(out), {x, w, b}, [&g, x, w, b, n, in, outd](const Tensor<T>& go) {
    if (g.requires_grad(w))
      kernels::gemm<T>(true, false, outd, in, n, go.data(), g.value(x).data(), g.grad_buffer(w).data(), true);
    if (b.valid() && g.requires_grad(b)) {
      auto& gb = g.grad_buffer(b);
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < outd; ++o) gb[o] += go[static_cast<std::size_t>(i) * outd + o];
    }
    if (g.requires_grad(x))
      kernels::gemm<T>(false, false, n, in, outd, go.data(), g.value(w).data(), g.grad_buffer(x).data(), true);
  });
}

template <class T>
Var avg_pool2(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  detail::check_rank(xv.shape(), 4, "avg_pool2");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2: odd spatial size " + shape_str(xv.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{n, c, ho, wo});
  const T q = T(static_cast<real_of_t<T>>(0.25));
  for (int i = 0; i < n * c; ++i) {
    const T* src = xv.data() + static_cast<std::size_t>(i) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(i) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        dst[y * wo + xx] = (src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] + src[(2 * y + 1) * w + 2 * xx] +
                            src[(2 * y + 1) * w + 2 * xx + 1]) * q;
  }
  return emit(g, std::move(out), {x}, [&g, x, n, c, h, w, ho, wo, q](const Tensor<T>& go) {
    auto& gx = g.grad_buffer(x);
    for (int i = 0; i < n * c; ++i) {
      const T* src = go.data() + static_cast<std::size_t>(i) * ho * wo;
      T* dst = gx.data() + static_cast<std::size_t>(i) * h * w;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const T v = src[y * wo + xx] * q;
          dst[2 * y * w + 2 * xx] += v;
          dst[2 * y * w + 2 * xx + 1] += v;
          dst[(2 * y + 1) * w + 2 * xx] += v;
          dst[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
}

// Nearest-neighbour 2x upsampling.
template <class T>
Var upsample2(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  detail::check_rank(xv.shape(), 4, "upsample2");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  Tensor<T> out(Shape{n, c, ho, wo});
  for (int i = 0; i < n * c; ++i) {
    const T* src = xv.data() + static_cast<std::size_t>(i) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(i) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
  }
  return emit(g, std::move(out), {x}, [&g, x, n, c, h, w, ho, wo](const Tensor<T>& go) {
    auto& gx = g.grad_buffer(x);
    for (int i = 0; i < n * c; ++i) {
      const T* src = go.data() + static_cast<std::size_t>(i) * ho * wo;
      T* dst = gx.data() + static_cast<std::size_t>(i) * h * w;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) dst[(y / 2) * w + xx / 2] += src[y * wo + xx];
    }
  });
}

// Per-sample, per-channel normalisation to zero mean and unit variance.
template <class T>
Var instance_norm(Graph<T>& g, Var x, double eps = 1e-5) {
  using std::sqrt;
  const auto& xv = g.value(x);
  detail::check_rank(xv.shape(), 4, "instance_norm");
  const int nc = xv.dim(0) * xv.dim(1);
  const int hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out(xv.shape());
  std::vector<T> inv_std(nc);
  for (int i = 0; i < nc; ++i) {
    const T* src = xv.data() + static_cast<std::size_t>(i) * hw;
    const T mu = detail::narrow<T>(detail::sum_wide(src, hw) / detail::Acc<T>(static_cast<double>(hw)));
    T* dst = out.data() + static_cast<std::size_t>(i) * hw;
    for (int p = 0; p < hw; ++p) dst[p] = src[p] - mu;
    const T var = detail::narrow<T>(detail::dot_wide(dst, dst, hw) / detail::Acc<T>(static_cast<double>(hw)));
    const T is = T(1) / sqrt(var + T(static_cast<real_of_t<T>>(eps)));
    inv_std[i] = is;
    for (int p = 0; p < hw; ++p) dst[p] *= is;
  }
  const Var self = g.next_var();
  return emit(g, std::move(out), {x}, [&g, x, self, nc, hw, inv_std = std::move(inv_std)](const Tensor<T>& go) {
    // dx = inv_std * (dy - mean(dy) - y * mean(dy * y))
    const auto& yv = g.value(self);
    auto& gx = g.grad_buffer(x);
    for (int i = 0; i < nc; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * hw;
      const T mg = detail::narrow<T>(detail::sum_wide(go.data() + off, hw) / detail::Acc<T>(static_cast<double>(hw)));
      const T mgy =
          detail::narrow<T>(detail::dot_wide(go.data() + off, yv.data() + off, hw) / detail::Acc<T>(static_cast<double>(hw)));
      const T is = inv_std[i];
      const T* gp = go.data() + off;
      const T* yp = yv.data() + off;
      T* xp = gx.data() + off;
      for (int p = 0; p < hw; ++p) xp[p] += is * (gp[p] - mg - yp[p] * mgy);
    }
  });
}

// y[n,c,:,:] = (offset + scale[n,c]) * x[n,c,:,:] + shift[n,c].
// scale/shift are [N, C] (per-sample, AdaIN) or [C] (shared affine).
template <class T>
Var channel_affine(Graph<T>& g, Var x, Var scale, Var shift, double offset) {
  const auto& xv = g.value(x);
  const auto& sv = g.value(scale);
  const auto& bv = g.value(shift);
  detail::check_rank(xv.shape(), 4, "channel_affine");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const bool per_sample = sv.rank() == 2;
  if ((per_sample && (sv.dim(0) != n || sv.dim(1) != c)) || (!per_sample && sv.size() != static_cast<std::size_t>(c)))
    throw DimensionError("channel_affine: scale " + shape_str(sv.shape()) + " incompatible with " +
                         shape_str(xv.shape()));
  detail::check_same(sv.shape(), bv.shape(), "channel_affine scale/shift");
  const T off = T(static_cast<real_of_t<T>>(offset));
  auto idx = [per_sample, c](int s, int ch) { return per_sample ? static_cast<std::size_t>(s) * c + ch : ch; };
  Tensor<T> out(xv.shape());
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const T a = off + sv[idx(s, ch)], b = bv[idx(s, ch)];
      const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * hw;
      for (int p = 0; p < hw; ++p) out[base + p] = a * xv[base + p] + b;
    }
  return emit(g, std::move(out), {x, scale, shift}, [&g, x, scale, shift, n, c, hw, off, idx](const Tensor<T>& go) {
    const auto& xv = g.value(x);
    const auto& sv = g.value(scale);
    const bool nx = g.requires_grad(x), ns = g.requires_grad(scale), nb = g.requires_grad(shift);
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * hw;
        const T a = off + sv[idx(s, ch)];
        detail::Acc<T> gs{}, gb{};
        for (int p = 0; p < hw; ++p) {
          gs += detail::widen(T(go[base + p] * xv[base + p]));
          gb += detail::widen(go[base + p]);
        }
        if (ns) g.grad_buffer(scale)[idx(s, ch)] += detail::narrow<T>(gs);
        if (nb) g.grad_buffer(shift)[idx(s, ch)] += detail::narrow<T>(gb);
        if (nx) {
          auto& gx = g.grad_buffer(x);
          for (int p = 0; p < hw; ++p) gx[base + p] += a * go[base + p];
        }
      }
  });
}

// Columns [start, start+len) of a [N, D] matrix.
template <class T>
Var slice_cols(Graph<T>& g, Var x, int start, int len) {
  const auto& xv = g.value(x);
  detail::check_rank(xv.shape(), 2, "slice_cols");
  const int n = xv.dim(0), d = xv.dim(1);
  if (start < 0 || start + len > d) throw DimensionError("slice_cols: range out of bounds for " + shape_str(xv.shape()));
  Tensor<T> out(Shape{n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out[static_cast<std::size_t>(i) * len + j] = xv[static_cast<std::size_t>(i) * d + start + j];
  return emit(g, std::move(out), {x}, [&g, x, n, d, start, len](const Tensor<T>& go) {
    auto& gx = g.grad_buffer(x);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j) gx[static_cast<std::size_t>(i) * d + start + j] += go[static_cast<std::size_t>(i) * len + j];
  });
}

// Row i of the result is row i of candidates[labels[i]]. Gradients reach only
// the selected candidate rows, so unselected branches receive exact zeros.
template <class T>
Var select_rows(Graph<T>& g, std::span<const Var> candidates, std::span<const int> labels) {
  if (candidates.empty()) throw DimensionError("select_rows: no candidates");
  const auto& first = g.value(candidates[0]);
  detail::check_rank(first.shape(), 2, "select_rows");
  const int n = first.dim(0), d = first.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw DimensionError("select_rows: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  for (Var v : candidates) detail::check_same(g.value(v).shape(), first.shape(), "select_rows");
  Tensor<T> out(Shape{n, d});
  for (int i = 0; i < n; ++i) {
    const int k = labels[i];
    if (k < 0 || k >= static_cast<int>(candidates.size()))
      throw IndexError("label " + std::to_string(k) + " out of range [0, " + std::to_string(candidates.size()) + ")");
    const auto& src = g.value(candidates[k]);
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = src[static_cast<std::size_t>(i) * d + j];
  }
  bool any = false;
  for (Var v : candidates) any = any || detail::any_requires(g, {v});
  if (!any) return g.constant(std::move(out));
  std::vector<Var> cands(candidates.begin(), candidates.end());
  std::vector<int> labs(labels.begin(), labels.end());
  return g.push(std::move(out), true, [&g, cands = std::move(cands), labs = std::move(labs), n, d](const Tensor<T>& go) {
    for (int i = 0; i < n; ++i) {
      const Var v = cands[labs[i]];
      if (!g.requires_grad(v)) continue;
      auto& gv = g.grad_buffer(v);
      for (int j = 0; j < d; ++j) gv[static_cast<std::size_t>(i) * d + j] += go[static_cast<std::size_t>(i) * d + j];
    }
  });
}

}  // namespace cbt::ops
