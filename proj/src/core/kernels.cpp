#include "vstain/core/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vstain {

int conv_out_size(int in, int kernel, const ConvGeometry& g) {
  return (in + 2 * g.pad - kernel) / g.stride + 1;
}

int conv_transpose_out_size(int in, int kernel, const ConvGeometry& g) {
  return (in - 1) * g.stride - 2 * g.pad + kernel + g.output_padding;
}

int pool_out_size(int in, const PoolGeometry& g) {
  const int span = in - g.kernel;
  int out = (g.ceil_mode ? (span + g.stride - 1) / g.stride : span / g.stride) + 1;
  // A window may not start past the end of the input.
  if (g.ceil_mode && (out - 1) * g.stride >= in) --out;
  return out;
}

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMajor<T>, 0, Eigen::OuterStride<>>;

// Row-major C = alpha * op(A) * op(B) + beta * C; op(A) is m x k, op(B) k x n.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  ConstMap<T> am(a, ta ? k : m, ta ? m : k, Eigen::OuterStride<>(lda));
  ConstMap<T> bm(b, tb ? n : k, tb ? k : n, Eigen::OuterStride<>(ldb));
  MutMap<T> cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == T{0}) {
    cm.setZero();
  } else if (beta != T{1}) {
    cm *= beta;
  }
  if (ta && tb) {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  } else if (ta) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else if (tb) {
    cm.noalias() += alpha * am * bm.transpose();
  } else {
    cm.noalias() += alpha * am * bm;
  }
}

// Output columns [lo, hi) whose tap at offset kj lands inside [0, width).
std::pair<int, int> valid_range(int wo, int width, int stride, int pad, int kj) {
  const int shift = pad - kj;
  int lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  int hi = (width - 1 + shift) >= 0 ? (width - 1 + shift) / stride + 1 : 0;
  lo = std::min(lo, wo);
  hi = std::clamp(hi, lo, wo);
  return {lo, hi};
}

// Lowers one CHW image into a [C*K*K, Ho*Wo] column matrix for a stride/pad
// convolution producing an Ho x Wo grid.
template <typename T>
void im2col(const T* img, int channels, int height, int width, int k, int stride, int pad, int ho,
            int wo, T* cols) {
  const std::int64_t out_plane = static_cast<std::int64_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<std::int64_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<std::int64_t>(c) * k + ki) * k + kj) * out_plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          T* dst = row + static_cast<std::int64_t>(oy) * wo;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* line = src + static_cast<std::int64_t>(iy) * width;
          const auto [lo, hi] = valid_range(wo, width, stride, pad, kj);
          std::fill(dst, dst + lo, T{0});
          if (stride == 1) {
            std::copy(line + lo - pad + kj, line + hi - pad + kj, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox * stride - pad + kj];
          }
          std::fill(dst + hi, dst + wo, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back onto the image, accumulating.
template <typename T>
void col2im(const T* cols, int channels, int height, int width, int k, int stride, int pad, int ho,
            int wo, T* img) {
  const std::int64_t out_plane = static_cast<std::int64_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    T* dst = img + static_cast<std::int64_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<std::int64_t>(c) * k + ki) * k + kj) * out_plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          T* line = dst + static_cast<std::int64_t>(iy) * width;
          const T* src = row + static_cast<std::int64_t>(oy) * wo;
          const auto [lo, hi] = valid_range(wo, width, stride, pad, kj);
          for (int ox = lo; ox < hi; ++ox) line[ox * stride - pad + kj] += src[ox];
        }
      }
    }
  }
}

// Narrow stride-1 unpadded convolutions (few output channels, e.g. the RGB
// head) lower to a tall, thin GEMM that is dominated by the im2col traffic;
// accumulating shifted rows directly is several times faster there.
bool use_direct(int cout, const ConvGeometry& g) { return cout <= 4 && g.stride == 1 && g.pad == 0; }

template <typename T>
void direct_forward(const T* x, const T* w, int cin, int h, int wd, int cout, int k, T* y) {
  const int ho = h - k + 1, wo = wd - k + 1;
  for (int co = 0; co < cout; ++co) {
    T* yp = y + static_cast<std::int64_t>(co) * ho * wo;
    for (int ci = 0; ci < cin; ++ci) {
      const T* xp = x + static_cast<std::int64_t>(ci) * h * wd;
      const T* wp = w + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
      for (int oy = 0; oy < ho; ++oy) {
        T* yr = yp + static_cast<std::int64_t>(oy) * wo;
        for (int ki = 0; ki < k; ++ki) {
          const T* xr = xp + static_cast<std::int64_t>(oy + ki) * wd;
          for (int kj = 0; kj < k; ++kj) {
            const T wv = wp[ki * k + kj];
            const T* xs = xr + kj;
            for (int ox = 0; ox < wo; ++ox) yr[ox] += wv * xs[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void direct_backward_input(const T* dy, const T* w, int cin, int h, int wd, int cout, int k, T* dx) {
  const int ho = h - k + 1, wo = wd - k + 1;
  for (int ci = 0; ci < cin; ++ci) {
    T* dxp = dx + static_cast<std::int64_t>(ci) * h * wd;
    for (int co = 0; co < cout; ++co) {
      const T* dyp = dy + static_cast<std::int64_t>(co) * ho * wo;
      const T* wp = w + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
      for (int oy = 0; oy < ho; ++oy) {
        const T* dyr = dyp + static_cast<std::int64_t>(oy) * wo;
        for (int ki = 0; ki < k; ++ki) {
          T* dxr = dxp + static_cast<std::int64_t>(oy + ki) * wd;
          for (int kj = 0; kj < k; ++kj) {
            const T wv = wp[ki * k + kj];
            T* dst = dxr + kj;
            for (int ox = 0; ox < wo; ++ox) dst[ox] += wv * dyr[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void direct_backward_weight(const T* x, const T* dy, int cin, int h, int wd, int cout, int k, T* dw) {
  const int ho = h - k + 1, wo = wd - k + 1;
  // Lane-wise partial sums per tap, reduced once per (co, ci) pair.
  std::vector<T> lanes(static_cast<std::size_t>(k) * k * wo);
  for (int co = 0; co < cout; ++co) {
    const T* dyp = dy + static_cast<std::int64_t>(co) * ho * wo;
    for (int ci = 0; ci < cin; ++ci) {
      const T* xp = x + static_cast<std::int64_t>(ci) * h * wd;
      std::fill(lanes.begin(), lanes.end(), T{0});
      for (int oy = 0; oy < ho; ++oy) {
        const T* dyr = dyp + static_cast<std::int64_t>(oy) * wo;
        for (int ki = 0; ki < k; ++ki) {
          const T* xr = xp + static_cast<std::int64_t>(oy + ki) * wd;
          for (int kj = 0; kj < k; ++kj) {
            T* lane = lanes.data() + static_cast<std::int64_t>(ki * k + kj) * wo;
            const T* xs = xr + kj;
            for (int ox = 0; ox < wo; ++ox) lane[ox] += dyr[ox] * xs[ox];
          }
        }
      }
      T* wp = dw + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
      for (int t = 0; t < k * k; ++t) {
        const T* lane = lanes.data() + static_cast<std::int64_t>(t) * wo;
        T acc{0};
        for (int ox = 0; ox < wo; ++ox) acc += lane[ox];
        wp[t] += acc;
      }
    }
  }
}

bool is_pointwise(int k, const ConvGeometry& g) { return k == 1 && g.stride == 1 && g.pad == 0; }

template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const int n = y.n(), c = y.c();
  const std::int64_t plane = y.shape().plane();
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      T* p = y.plane(i, ch);
      const T b = bias[ch];
      for (std::int64_t j = 0; j < plane; ++j) p[j] += b;
    }
  }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& dy, Tensor<T>& dbias) {
  const std::int64_t plane = dy.shape().plane();
  for (int ch = 0; ch < dy.c(); ++ch) {
    double s = 0.0;
    for (int i = 0; i < dy.n(); ++i) {
      const T* p = dy.plane(i, ch);
      for (std::int64_t j = 0; j < plane; ++j) s += p[j];
    }
    dbias[ch] += static_cast<T>(s);
  }
}

// Sums per-thread partial buffers into `out` in thread order.
template <typename T>
void reduce_partials(const std::vector<std::vector<T>>& partials, T* out, std::size_t count) {
  for (const auto& part : partials) {
    for (std::size_t i = 0; i < count; ++i) out[i] += part[i];
  }
}

int symmetric_index(int i, int n) {
  // Half-sample symmetric extension: d c b a | a b c d | d c b a.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

std::vector<double> gaussian_taps(double sigma, double truncate) {
  const int radius = static_cast<int>(std::ceil(truncate * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : taps) v /= sum;
  return taps;
}

}  // namespace

namespace kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}
}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                    const ConvGeometry& g, Tensor<T>& y) {
  const int n = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = weight.n(), k = weight.h();
  if (weight.c() != cin) throw std::invalid_argument("conv2d: channel mismatch " + x.shape().str() + " vs weight " + weight.shape().str());
  const int ho = conv_out_size(h, k, g), wo = conv_out_size(w, k, g);
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small " + x.shape().str());
  y = Tensor<T>(Shape{n, cout, ho, wo});
  const int rows = cin * k * k;
  const int cols_n = ho * wo;
  const bool pointwise = is_pointwise(k, g);
  if (use_direct(cout, g)) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) direct_forward(x.sample(i), weight.data(), cin, h, w, cout, k, y.sample(i));
    if (bias) add_bias(y, *bias);
    return;
  }
#pragma omp parallel
  {
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(rows) * cols_n);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      const T* src = x.sample(i);
      if (!pointwise) {
        im2col(src, cin, h, w, k, g.stride, g.pad, ho, wo, cols.data());
        src = cols.data();
      }
      gemm(false, false, cout, cols_n, rows, T{1}, weight.data(), rows, src, cols_n, T{0},
           y.sample(i), cols_n);
    }
  }
  if (bias) add_bias(y, *bias);
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const ConvGeometry& g,
                           Tensor<T>& dx) {
  const int n = dy.n(), cout = weight.n(), cin = weight.c(), k = weight.h();
  const int ho = dy.h(), wo = dy.w();
  const int rows = cin * k * k, cols_n = ho * wo;
  const bool pointwise = is_pointwise(k, g);
  if (use_direct(cout, g)) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      direct_backward_input(dy.sample(i), weight.data(), cin, dx.h(), dx.w(), cout, k, dx.sample(i));
    }
    return;
  }
#pragma omp parallel
  {
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(rows) * cols_n);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      if (pointwise) {
        gemm(true, false, rows, cols_n, cout, T{1}, weight.data(), rows, dy.sample(i), cols_n,
             T{1}, dx.sample(i), cols_n);
      } else {
        gemm(true, false, rows, cols_n, cout, T{1}, weight.data(), rows, dy.sample(i), cols_n,
             T{0}, cols.data(), cols_n);
        col2im(cols.data(), cin, dx.h(), dx.w(), k, g.stride, g.pad, ho, wo, dx.sample(i));
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                            Tensor<T>& dweight, Tensor<T>* dbias) {
  const int n = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = dweight.n(), k = dweight.h();
  const int ho = dy.h(), wo = dy.w();
  const int rows = cin * k * k, cols_n = ho * wo;
  const bool pointwise = is_pointwise(k, g);
  const std::size_t wcount = static_cast<std::size_t>(dweight.size());
  std::vector<std::vector<T>> partials(static_cast<std::size_t>(std::min(max_threads(), std::max(n, 1))));
#pragma omp parallel num_threads(static_cast<int>(partials.size()))
  {
    auto& part = partials[static_cast<std::size_t>(thread_id())];
    part.assign(wcount, T{0});
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(rows) * cols_n);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      if (use_direct(cout, g)) {
        direct_backward_weight(x.sample(i), dy.sample(i), cin, h, w, cout, k, part.data());
        continue;
      }
      const T* src = x.sample(i);
      if (!pointwise) {
        im2col(src, cin, h, w, k, g.stride, g.pad, ho, wo, cols.data());
        src = cols.data();
      }
      gemm(false, true, cout, rows, cols_n, T{1}, dy.sample(i), cols_n, src, cols_n, T{1},
           part.data(), rows);
    }
  }
  reduce_partials(partials, dweight.data(), wcount);
  if (dbias) accumulate_bias_grad(dy, *dbias);
}

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                              const ConvGeometry& g, Tensor<T>& y) {
  const int n = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = weight.c(), k = weight.h();
  if (weight.n() != cin) throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int ho = conv_transpose_out_size(h, k, g), wo = conv_transpose_out_size(w, k, g);
  y = Tensor<T>(Shape{n, cout, ho, wo});
  const int rows = cout * k * k, cols_n = h * w;
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(rows) * cols_n);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      gemm(true, false, rows, cols_n, cin, T{1}, weight.data(), rows, x.sample(i), cols_n, T{0},
           cols.data(), cols_n);
      col2im(cols.data(), cout, ho, wo, k, g.stride, g.pad, h, w, y.sample(i));
    }
  }
  if (bias) add_bias(y, *bias);
}

template <typename T>
void conv_transpose2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight,
                                     const ConvGeometry& g, Tensor<T>& dx) {
  const int n = dy.n(), cin = weight.n(), cout = weight.c(), k = weight.h();
  const int h = dx.h(), w = dx.w();
  const int rows = cout * k * k, cols_n = h * w;
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(rows) * cols_n);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      im2col(dy.sample(i), cout, dy.h(), dy.w(), k, g.stride, g.pad, h, w, cols.data());
      gemm(false, false, cin, cols_n, rows, T{1}, weight.data(), rows, cols.data(), cols_n, T{1},
           dx.sample(i), cols_n);
    }
  }
}

template <typename T>
void conv_transpose2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy,
                                      const ConvGeometry& g, Tensor<T>& dweight, Tensor<T>* dbias) {
  const int n = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = dweight.c(), k = dweight.h();
  const int rows = cout * k * k, cols_n = h * w;
  const std::size_t wcount = static_cast<std::size_t>(dweight.size());
  std::vector<std::vector<T>> partials(static_cast<std::size_t>(std::min(max_threads(), std::max(n, 1))));
#pragma omp parallel num_threads(static_cast<int>(partials.size()))
  {
    auto& part = partials[static_cast<std::size_t>(thread_id())];
    part.assign(wcount, T{0});
    std::vector<T> cols(static_cast<std::size_t>(rows) * cols_n);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      im2col(dy.sample(i), cout, dy.h(), dy.w(), k, g.stride, g.pad, h, w, cols.data());
      gemm(false, true, cin, rows, cols_n, T{1}, x.sample(i), cols_n, cols.data(), cols_n, T{1},
           part.data(), rows);
    }
  }
  reduce_partials(partials, dweight.data(), wcount);
  if (dbias) accumulate_bias_grad(dy, *dbias);
}

template <typename T>
void reflect_pad_forward(const Tensor<T>& x, int pad, Tensor<T>& y) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  if (pad >= h || pad >= w) throw std::invalid_argument("reflect pad larger than input " + x.shape().str());
  const int ho = h + 2 * pad, wo = w + 2 * pad;
  y = Tensor<T>(Shape{n, c, ho, wo});
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.plane(i, ch);
      T* dst = y.plane(i, ch);
      for (int oy = 0; oy < ho; ++oy) {
        const T* line = src + static_cast<std::int64_t>(reflect_index(oy - pad, h)) * w;
        T* out = dst + static_cast<std::int64_t>(oy) * wo;
        for (int ox = 0; ox < wo; ++ox) out[ox] = line[reflect_index(ox - pad, w)];
      }
    }
  }
}

template <typename T>
void reflect_pad_backward(const Tensor<T>& dy, int pad, Tensor<T>& dx) {
  const int n = dx.n(), c = dx.c(), h = dx.h(), w = dx.w();
  const int ho = dy.h(), wo = dy.w();
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* src = dy.plane(i, ch);
      T* dst = dx.plane(i, ch);
      for (int oy = 0; oy < ho; ++oy) {
        T* line = dst + static_cast<std::int64_t>(reflect_index(oy - pad, h)) * w;
        const T* in = src + static_cast<std::int64_t>(oy) * wo;
        for (int ox = 0; ox < wo; ++ox) line[reflect_index(ox - pad, w)] += in[ox];
      }
    }
  }
}

template <typename T>
void instance_norm_forward(const Tensor<T>& x, T eps, Tensor<T>& normed, Tensor<T>& inv_std) {
  const int n = x.n(), c = x.c();
  const std::int64_t plane = x.shape().plane();
  normed = Tensor<T>(x.shape());
  inv_std = Tensor<T>(Shape{n, c, 1, 1});
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.plane(i, ch);
      double mean = 0.0;
      for (std::int64_t j = 0; j < plane; ++j) mean += src[j];
      mean /= static_cast<double>(plane);
      double var = 0.0;
      for (std::int64_t j = 0; j < plane; ++j) {
        const double d = src[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
      T* dst = normed.plane(i, ch);
      for (std::int64_t j = 0; j < plane; ++j) dst[j] = static_cast<T>((src[j] - mean) * is);
      inv_std.at(i, ch, 0, 0) = static_cast<T>(is);
    }
  }
}

template <typename T>
void instance_norm_backward(const Tensor<T>& dy, const Tensor<T>& normed, const Tensor<T>& inv_std,
                            Tensor<T>& dx) {
  const int n = dy.n(), c = dy.c();
  const std::int64_t plane = dy.shape().plane();
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* g = dy.plane(i, ch);
      const T* yn = normed.plane(i, ch);
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::int64_t j = 0; j < plane; ++j) {
        mean_g += g[j];
        mean_gy += static_cast<double>(g[j]) * yn[j];
      }
      mean_g /= static_cast<double>(plane);
      mean_gy /= static_cast<double>(plane);
      const double is = inv_std.at(i, ch, 0, 0);
      T* out = dx.plane(i, ch);
      for (std::int64_t j = 0; j < plane; ++j) {
        out[j] += static_cast<T>(is * (g[j] - mean_g - yn[j] * mean_gy));
      }
    }
  }
}

template <typename T>
void maxpool2d_forward(const Tensor<T>& x, const PoolGeometry& g, Tensor<T>& y) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int ho = pool_out_size(h, g), wo = pool_out_size(w, g);
  y = Tensor<T>(Shape{n, c, ho, wo});
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.plane(i, ch);
      T* dst = y.plane(i, ch);
      for (int oy = 0; oy < ho; ++oy) {
        const int y0 = oy * g.stride, y1 = std::min(y0 + g.kernel, h);
        for (int ox = 0; ox < wo; ++ox) {
          const int x0 = ox * g.stride, x1 = std::min(x0 + g.kernel, w);
          T best = src[static_cast<std::int64_t>(y0) * w + x0];
          for (int yy = y0; yy < y1; ++yy) {
            for (int xx = x0; xx < x1; ++xx) best = std::max(best, src[static_cast<std::int64_t>(yy) * w + xx]);
          }
          dst[static_cast<std::int64_t>(oy) * wo + ox] = best;
        }
      }
    }
  }
}

template <typename T>
void gaussian_filter3d(const Tensor<T>& stack, double sigma, double truncate, Tensor<T>& out) {
  const int d = stack.n(), h = stack.h(), w = stack.w();
  if (stack.c() != 1) throw std::invalid_argument("gaussian_filter3d expects [D,1,H,W]");
  const auto taps = gaussian_taps(sigma, truncate);
  const int r = static_cast<int>(taps.size() / 2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> a(static_cast<std::size_t>(stack.size()));
  std::vector<double> b(a.size());
  for (std::int64_t i = 0; i < stack.size(); ++i) a[static_cast<std::size_t>(i)] = stack[i];

  // x pass
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < d; ++z) {
    for (int yy = 0; yy < h; ++yy) {
      const double* line = a.data() + z * plane + static_cast<std::int64_t>(yy) * w;
      double* dst = b.data() + z * plane + static_cast<std::int64_t>(yy) * w;
      for (int xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t) s += taps[static_cast<std::size_t>(t + r)] * line[symmetric_index(xx + t, w)];
        dst[xx] = s;
      }
    }
  }
  // y pass
#pragma omp parallel for collapse(2) schedule(static)
  for (int z = 0; z < d; ++z) {
    for (int yy = 0; yy < h; ++yy) {
      double* dst = a.data() + z * plane + static_cast<std::int64_t>(yy) * w;
      for (int xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t) {
          s += taps[static_cast<std::size_t>(t + r)] *
               b[static_cast<std::size_t>(z * plane + static_cast<std::int64_t>(symmetric_index(yy + t, h)) * w + xx)];
        }
        dst[xx] = s;
      }
    }
  }
  // z pass
  out = Tensor<T>(stack.shape());
#pragma omp parallel for schedule(static)
  for (int z = 0; z < d; ++z) {
    for (std::int64_t j = 0; j < plane; ++j) {
      double s = 0.0;
      for (int t = -r; t <= r; ++t) {
        s += taps[static_cast<std::size_t>(t + r)] * a[static_cast<std::size_t>(symmetric_index(z + t, d) * plane + j)];
      }
      out.plane(z, 0)[j] = static_cast<T>(s);
    }
  }
}

#define VSTAIN_INSTANTIATE_KERNELS(T)                                                              \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,          \
                                  const ConvGeometry&, Tensor<T>&);                              \
  template void conv2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, \
                                         Tensor<T>&);                                            \
  template void conv2d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&,                    \
                                          const ConvGeometry&, Tensor<T>&, Tensor<T>*);          \
  template void conv_transpose2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, \
                                            const ConvGeometry&, Tensor<T>&);                    \
  template void conv_transpose2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                   const ConvGeometry&, Tensor<T>&);             \
  template void conv_transpose2d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                    const ConvGeometry&, Tensor<T>&, Tensor<T>*); \
  template void reflect_pad_forward<T>(const Tensor<T>&, int, Tensor<T>&);                       \
  template void reflect_pad_backward<T>(const Tensor<T>&, int, Tensor<T>&);                      \
  template void instance_norm_forward<T>(const Tensor<T>&, T, Tensor<T>&, Tensor<T>&);           \
  template void instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                          Tensor<T>&);                                           \
  template void maxpool2d_forward<T>(const Tensor<T>&, const PoolGeometry&, Tensor<T>&);         \
  template void gaussian_filter3d<T>(const Tensor<T>&, double, double, Tensor<T>&);

VSTAIN_INSTANTIATE_KERNELS(float)
VSTAIN_INSTANTIATE_KERNELS(double)
#undef VSTAIN_INSTANTIATE_KERNELS

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                    const ConvGeometry& g, Tensor<T>& y) {
  const int cout = weight.n(), cin = x.c(), k = weight.h();
  const int ho = conv_out_size(x.h(), k, g), wo = conv_out_size(x.w(), k, g);
  y = Tensor<T>(Shape{x.n(), cout, ho, wo});
  for (int i = 0; i < x.n(); ++i)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double s = bias ? static_cast<double>((*bias)[co]) : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                s += static_cast<double>(weight.at(co, ci, ky, kx)) * x.at(i, ci, iy, ix);
              }
          y.at(i, co, oy, ox) = static_cast<T>(s);
        }
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const ConvGeometry& g,
                           Tensor<T>& dx) {
  const int k = weight.h();
  for (int i = 0; i < dy.n(); ++i)
    for (int co = 0; co < dy.c(); ++co)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox)
          for (int ci = 0; ci < weight.c(); ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= dx.h() || ix < 0 || ix >= dx.w()) continue;
                dx.at(i, ci, iy, ix) += weight.at(co, ci, ky, kx) * dy.at(i, co, oy, ox);
              }
}

template <typename T>
void conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                            Tensor<T>& dweight, Tensor<T>* dbias) {
  const int k = dweight.h();
  for (int i = 0; i < dy.n(); ++i)
    for (int co = 0; co < dy.c(); ++co)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const T gval = dy.at(i, co, oy, ox);
          if (dbias) (*dbias)[co] += gval;
          for (int ci = 0; ci < x.c(); ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                dweight.at(co, ci, ky, kx) += gval * x.at(i, ci, iy, ix);
              }
        }
}

// Scatter form: every input sample spreads weight-scaled copies onto the
// upsampled grid.
template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                              const ConvGeometry& g, Tensor<T>& y) {
  const int cout = weight.c(), k = weight.h();
  const int ho = conv_transpose_out_size(x.h(), k, g), wo = conv_transpose_out_size(x.w(), k, g);
  y = Tensor<T>(Shape{x.n(), cout, ho, wo});
  for (int i = 0; i < x.n(); ++i) {
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) y.at(i, co, oy, ox) = bias ? (*bias)[co] : T{0};
    for (int ci = 0; ci < x.c(); ++ci)
      for (int iy = 0; iy < x.h(); ++iy)
        for (int ix = 0; ix < x.w(); ++ix)
          for (int co = 0; co < cout; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky, ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                y.at(i, co, oy, ox) += weight.at(ci, co, ky, kx) * x.at(i, ci, iy, ix);
              }
  }
}

template <typename T>
void conv_transpose2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight,
                                     const ConvGeometry& g, Tensor<T>& dx) {
  const int k = weight.h();
  for (int i = 0; i < dx.n(); ++i)
    for (int ci = 0; ci < dx.c(); ++ci)
      for (int iy = 0; iy < dx.h(); ++iy)
        for (int ix = 0; ix < dx.w(); ++ix) {
          double s = 0.0;
          for (int co = 0; co < weight.c(); ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky, ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= dy.h() || ox < 0 || ox >= dy.w()) continue;
                s += static_cast<double>(weight.at(ci, co, ky, kx)) * dy.at(i, co, oy, ox);
              }
          dx.at(i, ci, iy, ix) += static_cast<T>(s);
        }
}

template <typename T>
void conv_transpose2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy,
                                      const ConvGeometry& g, Tensor<T>& dweight, Tensor<T>* dbias) {
  const int k = dweight.h();
  for (int i = 0; i < x.n(); ++i) {
    if (dbias) {
      for (int co = 0; co < dy.c(); ++co)
        for (int oy = 0; oy < dy.h(); ++oy)
          for (int ox = 0; ox < dy.w(); ++ox) (*dbias)[co] += dy.at(i, co, oy, ox);
    }
    for (int ci = 0; ci < x.c(); ++ci)
      for (int iy = 0; iy < x.h(); ++iy)
        for (int ix = 0; ix < x.w(); ++ix)
          for (int co = 0; co < dy.c(); ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky, ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= dy.h() || ox < 0 || ox >= dy.w()) continue;
                dweight.at(ci, co, ky, kx) += x.at(i, ci, iy, ix) * dy.at(i, co, oy, ox);
              }
  }
}

template <typename T>
void reflect_pad_forward(const Tensor<T>& x, int pad, Tensor<T>& y) {
  y = Tensor<T>(Shape{x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad});
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch)
      for (int oy = 0; oy < y.h(); ++oy)
        for (int ox = 0; ox < y.w(); ++ox) {
          int sy = oy - pad, sx = ox - pad;
          if (sy < 0) sy = -sy;
          if (sy >= x.h()) sy = 2 * x.h() - 2 - sy;
          if (sx < 0) sx = -sx;
          if (sx >= x.w()) sx = 2 * x.w() - 2 - sx;
          y.at(i, ch, oy, ox) = x.at(i, ch, sy, sx);
        }
}

template <typename T>
void instance_norm_forward(const Tensor<T>& x, T eps, Tensor<T>& normed, Tensor<T>& inv_std) {
  normed = Tensor<T>(x.shape());
  inv_std = Tensor<T>(Shape{x.n(), x.c(), 1, 1});
  const double count = static_cast<double>(x.shape().plane());
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch) {
      double s = 0.0, s2 = 0.0;
      for (int yy = 0; yy < x.h(); ++yy)
        for (int xx = 0; xx < x.w(); ++xx) {
          s += x.at(i, ch, yy, xx);
          s2 += static_cast<double>(x.at(i, ch, yy, xx)) * x.at(i, ch, yy, xx);
        }
      const double mean = s / count;
      const double var = std::max(0.0, s2 / count - mean * mean);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std.at(i, ch, 0, 0) = static_cast<T>(is);
      for (int yy = 0; yy < x.h(); ++yy)
        for (int xx = 0; xx < x.w(); ++xx)
          normed.at(i, ch, yy, xx) = static_cast<T>((x.at(i, ch, yy, xx) - mean) * is);
    }
}

template <typename T>
void maxpool2d_forward(const Tensor<T>& x, const PoolGeometry& g, Tensor<T>& y) {
  const int ho = pool_out_size(x.h(), g), wo = pool_out_size(x.w(), g);
  y = Tensor<T>(Shape{x.n(), x.c(), ho, wo});
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int yy = oy * g.stride + ky, xx = ox * g.stride + kx;
              if (yy < x.h() && xx < x.w()) best = std::max(best, x.at(i, ch, yy, xx));
            }
          y.at(i, ch, oy, ox) = best;
        }
}

template <typename T>
void gaussian_filter3d(const Tensor<T>& stack, double sigma, double truncate, Tensor<T>& out) {
  const int d = stack.n(), h = stack.h(), w = stack.w();
  const int r = static_cast<int>(std::ceil(truncate * sigma));
  // Full 3D kernel normalised over the truncated cube.
  std::vector<double> kernel;
  double total = 0.0;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const double v = std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * sigma * sigma));
        kernel.push_back(v);
        total += v;
      }
  out = Tensor<T>(stack.shape());
  for (int z = 0; z < d; ++z)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        double s = 0.0;
        std::size_t idx = 0;
        for (int dz = -r; dz <= r; ++dz)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx, ++idx) {
              s += kernel[idx] * stack.at(symmetric_index(z + dz, d), 0, symmetric_index(yy + dy, h),
                                          symmetric_index(xx + dx, w));
            }
        out.at(z, 0, yy, xx) = static_cast<T>(s / total);
      }
}

#define VSTAIN_INSTANTIATE_REFERENCE(T)                                                            \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,          \
                                  const ConvGeometry&, Tensor<T>&);                              \
  template void conv2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, \
                                         Tensor<T>&);                                            \
  template void conv2d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&,                    \
                                          const ConvGeometry&, Tensor<T>&, Tensor<T>*);          \
  template void conv_transpose2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, \
                                            const ConvGeometry&, Tensor<T>&);                    \
  template void conv_transpose2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                   const ConvGeometry&, Tensor<T>&);             \
  template void conv_transpose2d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                    const ConvGeometry&, Tensor<T>&, Tensor<T>*); \
  template void reflect_pad_forward<T>(const Tensor<T>&, int, Tensor<T>&);                       \
  template void instance_norm_forward<T>(const Tensor<T>&, T, Tensor<T>&, Tensor<T>&);           \
  template void maxpool2d_forward<T>(const Tensor<T>&, const PoolGeometry&, Tensor<T>&);         \
  template void gaussian_filter3d<T>(const Tensor<T>&, double, double, Tensor<T>&);

VSTAIN_INSTANTIATE_REFERENCE(float)
VSTAIN_INSTANTIATE_REFERENCE(double)
#undef VSTAIN_INSTANTIATE_REFERENCE

}  // namespace reference
}  // namespace vstain
