#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "cbt/dual.hpp"

namespace cbt::kernels {

namespace detail {

template <class R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M,N] (+)= op(A) * op(B), all row-major. op(A) is [M,K]; A is stored as
// [K,M] when trans_a. op(B) is [K,N]; B is stored as [N,K] when trans_b.
template <class R>
void gemm_real(bool trans_a, bool trans_b, int m, int n, int k, const R* a, const R* b, R* c, bool accumulate) {
  using Map = Eigen::Map<RowMat<R>>;
  using CMap = Eigen::Map<const RowMat<R>>;
  Map cm(c, m, n);
  if (!accumulate) cm.setZero();
  const CMap am(a, trans_a ? k : m, trans_a ? m : k);
  const CMap bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) cm.noalias() += am * bm;
  else if (trans_a && !trans_b) cm.noalias() += am.transpose() * bm;
  else if (!trans_a && trans_b) cm.noalias() += am * bm.transpose();
  else cm.noalias() += am.transpose() * bm.transpose();
}

template <class U>
bool any_tangent(const Dual<U>* p, std::size_t n) {
  return std::any_of(p, p + n, [](const Dual<U>& d) { return d.t != U(0); });
}

}  // namespace detail

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if constexpr (!is_dual_v<T>) {
    detail::gemm_real<T>(trans_a, trans_b, m, n, k, a, b, c, accumulate);
  } else {
    // (Av + ε At)(Bv + ε Bt) = Av Bv + ε (At Bv + Av Bt), computed with real GEMMs.
    using U = real_of_t<T>;
    const std::size_t na = static_cast<std::size_t>(m) * k, nb = static_cast<std::size_t>(k) * n,
                      nc = static_cast<std::size_t>(m) * n;
    std::vector<U> av(na), at(na), bv(nb), bt(nb), cv(nc), ct(nc);
    for (std::size_t i = 0; i < na; ++i) { av[i] = a[i].v; at[i] = a[i].t; }
    for (std::size_t i = 0; i < nb; ++i) { bv[i] = b[i].v; bt[i] = b[i].t; }
    if (accumulate)
      for (std::size_t i = 0; i < nc; ++i) { cv[i] = c[i].v; ct[i] = c[i].t; }
    detail::gemm_real<U>(trans_a, trans_b, m, n, k, av.data(), bv.data(), cv.data(), accumulate);
    if (detail::any_tangent(a, na))
      detail::gemm_real<U>(trans_a, trans_b, m, n, k, at.data(), bv.data(), ct.data(), accumulate);
    else if (!accumulate)
      std::fill(ct.begin(), ct.end(), U(0));
    if (detail::any_tangent(b, nb))
      detail::gemm_real<U>(trans_a, trans_b, m, n, k, av.data(), bt.data(), ct.data(), true);
    for (std::size_t i = 0; i < nc; ++i) c[i] = T(cv[i], ct[i]);
  }
}

// Unfolds one [C, H, W] image into a [C*k*k, Ho*Wo] patch matrix (stride 1).
template <class T>
void im2col(const T* x, int channels, int h, int w, int k, int pad, T* col) {
  const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy + ky - pad;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T{});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox + kx - pad;
            dst[ox] = (ix < 0 || ix >= w) ? T{} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch gradients back into the image gradient.
template <class T>
void col2im(const T* col, int channels, int h, int w, int k, int pad, T* x) {
  const int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          T* dst = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace cbt::kernels
