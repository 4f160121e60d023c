#pragma once

#include <cstddef>

// Dense row-major compute kernels. The OpenMP versions in this namespace are
// what the tensor ops call; dimask::kernels::reference holds the serial
// versions the tests compare against. Every output element is produced by a
// single thread summing its products in ascending inner-index order, so the
// parallel and serial kernels agree bit for bit regardless of thread count.

namespace dimask::kernels {

// C[m,n] = op(A) * op(B)   (or C += ... when accumulate is set)
// op(A) is [m,k]: A is stored [m,k], or [k,m] when trans_a.
// op(B) is [k,n]: B is stored [k,n], or [n,k] when trans_b.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, const double* b, double* c,
          bool accumulate);

// Unfolds an [h,w,c] image into [out_h*out_w, kh*kw*c] patch rows for a
// square kernel with the given stride and zero padding.
void im2col(const double* image, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* columns);

// Adjoint of im2col: scatters patch rows back, accumulating into image.
void col2im(const double* columns, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* image);

constexpr std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                                      std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Selects the 256-bit gemm micro-kernel when the CPU has AVX (the default).
// Both widths round identically. Returns whether AVX is now in use.
bool set_avx(bool enabled);

// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, const double* b, double* c,
          bool accumulate);

void im2col(const double* image, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* columns);

void col2im(const double* columns, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* image);

}  // namespace reference
}  // namespace dimask::kernels
