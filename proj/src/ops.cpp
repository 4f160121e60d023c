#include <algorithm>
#include <cmath>
#include <cstdint>

#include "dimask/kernels.hpp"
#include "dimask/tensor.hpp"

namespace dimask {

namespace {

using detail::Node;

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) +
                         ", got shape " + shape_str(x.shape()));
  }
}

// Resolves operand pairing for elementwise ops: identical shapes, or one side
// holding a single value.
struct Pairing {
  Shape shape;
  bool a_scalar = false;
  bool b_scalar = false;
};

Pairing pair_shapes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {a.shape(), false, false};
  if (b.numel() == 1) return {a.shape(), false, true};
  if (a.numel() == 1) return {b.shape(), true, false};
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " do not match");
}

// Shared driver for elementwise binary ops. `f` computes the value, `da`/`db`
// the local partial derivatives given (a, b, out).
template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  const Pairing pr = pair_shapes(a, b, name);
  const std::size_t n = shape_numel(pr.shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[pr.a_scalar ? 0 : i], bv[pr.b_scalar ? 0 : i]);
  }
  return Tensor::make_result(pr.shape, std::move(out), {a, b}, [pr, da, db](Node& o) {
    Node& pa = o.parent(0);
    Node& pb = o.parent(1);
    const std::size_t n = o.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double x = pa.data[pr.a_scalar ? 0 : i];
      const double y = pb.data[pr.b_scalar ? 0 : i];
      const double g = o.grad[i];
      if (pa.requires_grad) pa.grad_buffer()[pr.a_scalar ? 0 : i] += g * da(x, y, o.data[i]);
      if (pb.requires_grad) pb.grad_buffer()[pr.b_scalar ? 0 : i] += g * db(x, y, o.data[i]);
    }
  });
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D d) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [d](Node& o) {
    Node& p = o.parent(0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < o.data.size(); ++i) g[i] += o.grad[i] * d(p.data[i], o.data[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, n, k](Node& o) {
    Node& pa = o.parent(0);
    Node& pb = o.parent(1);
    // dA = dC * B^T, dB = A^T * dC
    if (pa.requires_grad)
      kernels::gemm(false, true, m, k, n, o.grad.data(), pb.data.data(), pa.grad_buffer().data(), true);
    if (pb.requires_grad)
      kernels::gemm(true, false, k, n, m, pa.data.data(), o.grad.data(), pb.grad_buffer().data(), true);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, true, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, n, k](Node& o) {
    Node& pa = o.parent(0);
    Node& pb = o.parent(1);
    // C = A B^T: dA = dC * B, dB = dC^T * A
    if (pa.requires_grad)
      kernels::gemm(false, false, m, k, n, o.grad.data(), pb.data.data(), pa.grad_buffer().data(), true);
    if (pb.requires_grad)
      kernels::gemm(true, false, n, k, m, o.grad.data(), pa.data.data(), pb.grad_buffer().data(), true);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "maximum", [](double x, double y) { return std::max(x, y); },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (bias.numel() != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit rows of " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bv = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bv[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [n, d](Node& o) {
    Node& px = o.parent(0);
    Node& pb = o.parent(1);
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < n * d; ++i) g[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[i * d + j];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double s) { return s * (1.0 - s); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double e) { return e; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax axis out of range for " + shape_str(s));
  const std::size_t n = s[axis];
  if (n == 0) throw DimensionError("softmax over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t j = 0; j < n; ++j) {
        const double v = xv[base + j * inner];
        if (std::isnan(v)) throw std::domain_error("softmax input contains NaN");
        mx = std::max(mx, v);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return Tensor::make_result(s, std::move(out), {x}, [outer, inner, n](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = a * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[base + j * inner] * o.data[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs feature size " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
        Node& px = o.parent(0);
        Node& pg = o.parent(1);
        Node& pb = o.parent(2);
        if (pg.requires_grad || pb.requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              const double g = o.grad[r * d + j];
              if (pg.requires_grad) pg.grad_buffer()[j] += g * xhat[r * d + j];
              if (pb.requires_grad) pb.grad_buffer()[j] += g;
            }
          }
        }
        if (!px.requires_grad) return;
        auto& gx = px.grad_buffer();
        const auto dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = o.grad[r * d + j] * pg.data[j];
            sum_dh += dh;
            sum_dh_h += dh * xhat[r * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = o.grad[r * d + j] * pg.data[j];
            gx[r * d + j] += inv_std[r] / dd * (dd * dh - sum_dh - xhat[r * d + j] * sum_dh_h);
          }
        }
      });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (std::size_t i : idx) {
    if (i >= n) {
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       std::to_string(n) + " rows");
    }
  }
  std::vector<double> out(idx.size() * d);
  const auto xv = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(xv.data() + idx[r] * d, d, out.data() + r * d);
  return Tensor::make_result({idx.size(), d}, std::move(out), {x}, [idx, d](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += o.grad[r * d + j];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_stride = out_shape[axis] * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[axis] * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * out_stride + offset);
    offset += chunk;
  }
  return Tensor::make_result(out_shape, std::move(out), parts, [outer, out_stride, offsets](Node& o) {
    for (std::size_t pi = 0; pi < o.parents.size(); ++pi) {
      Node& p = o.parent(pi);
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const std::size_t chunk = p.data.size() / outer;
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t j = 0; j < chunk; ++j) g[a * chunk + j] += o.grad[a * out_stride + offsets[pi] + j];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice axis out of range for " + shape_str(s));
  if (begin > end || end > s[axis]) {
    throw IndexError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * inner;
  const std::size_t in_stride = s[axis] * inner;
  const std::size_t skip = begin * inner;
  std::vector<double> out(outer * chunk);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + o * in_stride + skip, chunk, out.data() + o * chunk);
  return Tensor::make_result(out_shape, std::move(out), {x}, [outer, chunk, in_stride, skip](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t j = 0; j < chunk; ++j) g[a * in_stride + skip + j] += o.grad[a * chunk + j];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return Tensor::make_result({n, m}, std::move(out), {x}, [m, n](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return Tensor::make_result(std::move(shape), x.to_vector(), {x}, [](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (std::size_t i = 0; i < o.data.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result({}, {total}, {x}, [](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel,
              std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 2, "conv2d weight");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t patch = kernel * kernel * c;
  if (weight.dim(0) != patch) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " does not match " +
                         std::to_string(kernel) + "x" + std::to_string(kernel) + "x" +
                         std::to_string(c) + " patches");
  }
  const std::size_t cout = weight.dim(1);
  if (bias.numel() != cout) throw DimensionError("conv2d: bias size mismatch");
  if (h + 2 * pad < kernel || w + 2 * pad < kernel) throw DimensionError("conv2d: input smaller than kernel");
  const std::size_t oh = kernels::conv_out_extent(h, kernel, stride, pad);
  const std::size_t ow = kernels::conv_out_extent(w, kernel, stride, pad);
  const std::size_t pixels = oh * ow;

  std::vector<double> cols(pixels * patch);
  kernels::im2col(x.data().data(), h, w, c, kernel, stride, pad, cols.data());
  std::vector<double> out(pixels * cout);
  kernels::gemm(false, false, pixels, cout, patch, cols.data(), weight.data().data(), out.data(), false);
  const auto bv = bias.data();
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t j = 0; j < cout; ++j) out[p * cout + j] += bv[j];

  return Tensor::make_result(
      {oh, ow, cout}, std::move(out), {x, weight, bias},
      [h, w, c, kernel, stride, pad, pixels, patch, cout, cols = std::move(cols)](Node& o) {
        Node& px = o.parent(0);
        Node& pw = o.parent(1);
        Node& pb = o.parent(2);
        if (pw.requires_grad)
          kernels::gemm(true, false, patch, cout, pixels, cols.data(), o.grad.data(),
                        pw.grad_buffer().data(), true);
        if (pb.requires_grad) {
          auto& g = pb.grad_buffer();
          for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t j = 0; j < cout; ++j) g[j] += o.grad[p * cout + j];
        }
        if (px.requires_grad) {
          std::vector<double> dcols(pixels * patch);
          kernels::gemm(false, true, pixels, patch, cout, o.grad.data(), pw.data.data(), dcols.data(), false);
          kernels::col2im(dcols.data(), h, w, c, kernel, stride, pad, px.grad_buffer().data());
        }
      });
}

Tensor upsample_bilinear(const Tensor& x, std::size_t h, std::size_t w, std::size_t factor) {
  require_rank(x, 2, "upsample_bilinear");
  if (x.dim(0) != h * w) {
    throw DimensionError("upsample_bilinear: " + shape_str(x.shape()) + " is not a " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  if (factor == 0) throw DimensionError("upsample_bilinear: factor must be positive");
  const std::size_t c = x.dim(1);
  const std::size_t oh = h * factor, ow = w * factor;

  struct Tap {
    std::size_t src[4];
    double weight[4];
  };
  auto axis_taps = [factor](std::size_t out, std::size_t extent) {
    double pos = (static_cast<double>(out) + 0.5) / static_cast<double>(factor) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, extent - 1);
    return std::tuple{lo, hi, pos - static_cast<double>(lo)};
  };
  std::vector<Tap> taps(oh * ow);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const auto [y0, y1, fy] = axis_taps(oy, h);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const auto [x0, x1, fx] = axis_taps(ox, w);
      taps[oy * ow + ox] = Tap{{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
                               {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
    }
  }
  const auto xv = x.data();
  std::vector<double> out(oh * ow * c, 0.0);
  for (std::size_t p = 0; p < taps.size(); ++p)
    for (int t = 0; t < 4; ++t)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[p * c + ch] += taps[p].weight[t] * xv[taps[p].src[t] * c + ch];
  return Tensor::make_result({oh * ow, c}, std::move(out), {x}, [c, taps = std::move(taps)](Node& o) {
    auto& g = o.parent(0).grad_buffer();
    for (std::size_t p = 0; p < taps.size(); ++p)
      for (int t = 0; t < 4; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) g[taps[p].src[t] * c + ch] += taps[p].weight[t] * o.grad[p * c + ch];
  });
}

}  // namespace dimask
