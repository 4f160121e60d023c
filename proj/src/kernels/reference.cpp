#include <cstdint>

#include "dimask/kernels.hpp"

namespace dimask::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        sum += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

namespace {

template <typename Visit>
void for_each_tap(std::size_t h, std::size_t w, std::size_t c,
                  std::size_t kernel, std::size_t stride, std::size_t pad,
                  Visit&& visit) {
  const std::size_t oh = conv_out_extent(h, kernel, stride, pad);
  const std::size_t ow = conv_out_extent(w, kernel, stride, pad);
  const std::size_t row_len = kernel * kernel * c;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const auto y = static_cast<std::int64_t>(oy * stride + ky) -
                         static_cast<std::int64_t>(pad);
          const auto x = static_cast<std::int64_t>(ox * stride + kx) -
                         static_cast<std::int64_t>(pad);
          const bool inside = y >= 0 && x >= 0 &&
                              y < static_cast<std::int64_t>(h) &&
                              x < static_cast<std::int64_t>(w);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t col =
                (oy * ow + ox) * row_len + (ky * kernel + kx) * c + ch;
            if (inside) {
              const std::size_t pix =
                  (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + ch;
              visit(col, pix);
            } else {
              visit(col, static_cast<std::size_t>(-1));
            }
          }
        }
      }
    }
  }
}

}  // namespace

void im2col(const double* image, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* columns) {
  for_each_tap(h, w, c, kernel, stride, pad, [&](std::size_t col, std::size_t pix) {
    columns[col] = pix == static_cast<std::size_t>(-1) ? 0.0 : image[pix];
  });
}

void col2im(const double* columns, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kernel, std::size_t stride, std::size_t pad,
            double* image) {
  for_each_tap(h, w, c, kernel, stride, pad, [&](std::size_t col, std::size_t pix) {
    if (pix != static_cast<std::size_t>(-1)) image[pix] += columns[col];
  });
}

}  // namespace dimask::kernels::reference
