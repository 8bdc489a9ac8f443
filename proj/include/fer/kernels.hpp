#pragma once

// Raw-pointer numerical kernels shared by the tensor type and the layers.
// Everything here is single-threaded so results are bit-reproducible for a
// given build.

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif

#include <cstddef>

#include <Eigen/Core>

namespace fer::kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[m x n] = op(A) * op(B), or C += ... when `accumulate`. All buffers are
/// row-major; op(A) is m x k and op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMatrix<T>>;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMatrix<T>> C(c, M, N);
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += Map(a, M, K) * Map(b, K, N);
  } else if (!trans_a && trans_b) {
    C.noalias() += Map(a, M, K) * Map(b, N, K).transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += Map(a, K, M).transpose() * Map(b, K, N);
  } else {
    C.noalias() += Map(a, K, M).transpose() * Map(b, N, K).transpose();
  }
}

/// Unrolls one C x H x W image into a (C*k*k) x (H*W) patch matrix for a
/// stride-1 convolution with zero padding `pad` on every side and output of
/// the same spatial size.
template <typename T>
void im2col_same(const T* image, std::size_t channels, std::size_t height, std::size_t width,
                 std::size_t kernel, T* columns) {
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto H = static_cast<std::ptrdiff_t>(height), W = static_cast<std::ptrdiff_t>(width);
  T* dst = columns;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) {
            for (std::ptrdiff_t x = 0; x < W; ++x) *dst++ = T{};
            continue;
          }
          const T* row = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            const std::ptrdiff_t sx = x + dx;
            *dst++ = (sx < 0 || sx >= W) ? T{} : row[sx];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col_same: scatters (adds) a patch matrix back into an image.
template <typename T>
void col2im_same_add(const T* columns, std::size_t channels, std::size_t height, std::size_t width,
                     std::size_t kernel, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto H = static_cast<std::ptrdiff_t>(height), W = static_cast<std::ptrdiff_t>(width);
  const T* src = columns;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= H) {
            src += W;
            continue;
          }
          T* row = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x, ++src) {
            const std::ptrdiff_t sx = x + dx;
            if (sx >= 0 && sx < W) row[sx] += *src;
          }
        }
      }
    }
  }
}

}  // namespace fer::kernels
