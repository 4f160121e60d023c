#include "dimask/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <memory>
#include <vector>

#include <immintrin.h>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dimask::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

// Register tile of the gemm micro-kernel.
constexpr std::size_t kRowTile = 4;
constexpr std::size_t kColTile = 8;

// acc[r][q] = sum over p (ascending) of ap[p][r] * bp[p][q], starting from
// zero. Separate multiply and add keep the rounding identical to the scalar
// reference.
// Four columns starting at `col` of an 8-wide panel.
void micro_kernel_sse(std::size_t k, const double* ap, const double* bp, std::size_t col,
                      double (&acc)[kRowTile][kColTile]) {
  bp += col;
  __m128d c00 = _mm_setzero_pd(), c01 = _mm_setzero_pd();
  __m128d c10 = _mm_setzero_pd(), c11 = _mm_setzero_pd();
  __m128d c20 = _mm_setzero_pd(), c21 = _mm_setzero_pd();
  __m128d c30 = _mm_setzero_pd(), c31 = _mm_setzero_pd();
  for (std::size_t p = 0; p < k; ++p, ap += kRowTile, bp += kColTile) {
    const __m128d b0 = _mm_loadu_pd(bp), b1 = _mm_loadu_pd(bp + 2);
    __m128d a = _mm_set1_pd(ap[0]);
    c00 = _mm_add_pd(c00, _mm_mul_pd(a, b0));
    c01 = _mm_add_pd(c01, _mm_mul_pd(a, b1));
    a = _mm_set1_pd(ap[1]);
    c10 = _mm_add_pd(c10, _mm_mul_pd(a, b0));
    c11 = _mm_add_pd(c11, _mm_mul_pd(a, b1));
    a = _mm_set1_pd(ap[2]);
    c20 = _mm_add_pd(c20, _mm_mul_pd(a, b0));
    c21 = _mm_add_pd(c21, _mm_mul_pd(a, b1));
    a = _mm_set1_pd(ap[3]);
    c30 = _mm_add_pd(c30, _mm_mul_pd(a, b0));
    c31 = _mm_add_pd(c31, _mm_mul_pd(a, b1));
  }
  _mm_storeu_pd(acc[0] + col, c00);
  _mm_storeu_pd(acc[0] + col + 2, c01);
  _mm_storeu_pd(acc[1] + col, c10);
  _mm_storeu_pd(acc[1] + col + 2, c11);
  _mm_storeu_pd(acc[2] + col, c20);
  _mm_storeu_pd(acc[2] + col + 2, c21);
  _mm_storeu_pd(acc[3] + col, c30);
  _mm_storeu_pd(acc[3] + col + 2, c31);
}

__attribute__((target("avx"))) void micro_kernel_avx(std::size_t k, const double* ap, const double* bp,
                                                    double (&acc)[kRowTile][kColTile]) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p, ap += kRowTile, bp += kColTile) {
    const __m256d b0 = _mm256_loadu_pd(bp), b1 = _mm256_loadu_pd(bp + 4);
    __m256d a = _mm256_broadcast_sd(ap);
    c00 = _mm256_add_pd(c00, _mm256_mul_pd(a, b0));
    c01 = _mm256_add_pd(c01, _mm256_mul_pd(a, b1));
    a = _mm256_broadcast_sd(ap + 1);
    c10 = _mm256_add_pd(c10, _mm256_mul_pd(a, b0));
    c11 = _mm256_add_pd(c11, _mm256_mul_pd(a, b1));
    a = _mm256_broadcast_sd(ap + 2);
    c20 = _mm256_add_pd(c20, _mm256_mul_pd(a, b0));
    c21 = _mm256_add_pd(c21, _mm256_mul_pd(a, b1));
    a = _mm256_broadcast_sd(ap + 3);
    c30 = _mm256_add_pd(c30, _mm256_mul_pd(a, b0));
    c31 = _mm256_add_pd(c31, _mm256_mul_pd(a, b1));
  }
  _mm256_storeu_pd(acc[0], c00);
  _mm256_storeu_pd(acc[0] + 4, c01);
  _mm256_storeu_pd(acc[1], c10);
  _mm256_storeu_pd(acc[1] + 4, c11);
  _mm256_storeu_pd(acc[2], c20);
  _mm256_storeu_pd(acc[2] + 4, c21);
  _mm256_storeu_pd(acc[3], c30);
  _mm256_storeu_pd(acc[3] + 4, c31);
}

std::atomic<bool> g_use_avx{__builtin_cpu_supports("avx") != 0};

void micro_kernel(std::size_t k, const double* ap, const double* bp, double (&acc)[kRowTile][kColTile]) {
  if (g_use_avx.load(std::memory_order_relaxed)) {
    micro_kernel_avx(k, ap, bp, acc);
  } else {
    micro_kernel_sse(k, ap, bp, 0, acc);
    micro_kernel_sse(k, ap, bp, 4, acc);
  }
}

}  // namespace

bool set_avx(bool enabled) {
  const bool available = __builtin_cpu_supports("avx") != 0;
  g_use_avx = enabled && available;
  return g_use_avx;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  const bool parallel = m * n * k >= kParallelWork && m > kRowTile;

  // B is packed once into zero-padded panels of kColTile columns:
  // panel[jb][p][0..kColTile).
  const std::size_t col_blocks = (n + kColTile - 1) / kColTile;
  std::unique_ptr<double[]> bpack(new double[col_blocks * k * kColTile]);
  for (std::size_t jb = 0; jb < col_blocks; ++jb) {
    double* panel = bpack.get() + jb * k * kColTile;
    const std::size_t j0 = jb * kColTile, jn = std::min(kColTile, n - j0);
    if (trans_b) {
      for (std::size_t q = 0; q < jn; ++q)
        for (std::size_t p = 0; p < k; ++p) panel[p * kColTile + q] = b[(j0 + q) * k + p];
    } else {
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = 0; q < jn; ++q) panel[p * kColTile + q] = b[p * n + j0 + q];
    }
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t q = jn; q < kColTile; ++q) panel[p * kColTile + q] = 0.0;
  }

  const auto row_blocks = static_cast<std::int64_t>((m + kRowTile - 1) / kRowTile);
#pragma omp parallel if (parallel)
  {
    std::unique_ptr<double[]> apack(new double[k * kRowTile]);
#pragma omp for schedule(static)
    for (std::int64_t ib = 0; ib < row_blocks; ++ib) {
      const std::size_t i0 = static_cast<std::size_t>(ib) * kRowTile;
      const std::size_t in = std::min(kRowTile, m - i0);
      if (in < kRowTile) std::fill(apack.get(), apack.get() + k * kRowTile, 0.0);
      if (trans_a) {
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t r = 0; r < in; ++r) apack[p * kRowTile + r] = a[p * m + i0 + r];
      } else {
        for (std::size_t r = 0; r < in; ++r)
          for (std::size_t p = 0; p < k; ++p) apack[p * kRowTile + r] = a[(i0 + r) * k + p];
      }

      for (std::size_t jb = 0; jb < col_blocks; ++jb) {
        const double* panel = bpack.get() + jb * k * kColTile;
        double acc[kRowTile][kColTile];
        micro_kernel(k, apack.get(), panel, acc);
        const std::size_t j0 = jb * kColTile, jn = std::min(kColTile, n - j0);
        for (std::size_t r = 0; r < in; ++r) {
          double* crow = c + (i0 + r) * n + j0;
          if (accumulate) {
            for (std::size_t q = 0; q < jn; ++q) crow[q] += acc[r][q];
          } else {
            for (std::size_t q = 0; q < jn; ++q) crow[q] = acc[r][q];
          }
        }
      }
    }
  }
}

void im2col(const double* image, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* columns) {
  const std::size_t oh = conv_out_extent(h, kernel, stride, pad);
  const std::size_t ow = conv_out_extent(w, kernel, stride, pad);
  const std::size_t row_len = kernel * kernel * c;
  const auto outputs = static_cast<std::int64_t>(oh * ow);
#pragma omp parallel for schedule(static) if (oh * ow * row_len >= kParallelWork)
  for (std::int64_t oo = 0; oo < outputs; ++oo) {
    const auto o = static_cast<std::size_t>(oo);
    const std::size_t oy = o / ow;
    const std::size_t ox = o % ow;
    double* dst = columns + o * row_len;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      const auto y = static_cast<std::int64_t>(oy * stride + ky) -
                     static_cast<std::int64_t>(pad);
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const auto x = static_cast<std::int64_t>(ox * stride + kx) -
                       static_cast<std::int64_t>(pad);
        double* cell = dst + (ky * kernel + kx) * c;
        if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(h) ||
            x >= static_cast<std::int64_t>(w)) {
          for (std::size_t ch = 0; ch < c; ++ch) cell[ch] = 0.0;
        } else {
          const double* src =
              image + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) cell[ch] = src[ch];
        }
      }
    }
  }
}

void col2im(const double* columns, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* image) {
  // Output patches overlap in the image, so the scatter stays serial to keep
  // a fixed accumulation order.
  reference::col2im(columns, h, w, c, kernel, stride, pad, image);
}

}  // namespace dimask::kernels
