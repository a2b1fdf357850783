#pragma once

// Dense NCHW compute kernels. `kernels::` holds the OpenMP-parallel versions
// used by the engine (im2col + BLAS GEMM for convolutions); `reference::`
// holds direct serial loops kept as a test oracle and benchmark baseline.
// Backward kernels accumulate into their outputs (+=); callers zero them.

#include "vstain/core/tensor.hpp"

namespace vstain {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;             // zero padding
  int output_padding = 0;  // transposed convolution only
};

// Output extent of a convolution / transposed convolution along one axis.
int conv_out_size(int in, int kernel, const ConvGeometry& g);
int conv_transpose_out_size(int in, int kernel, const ConvGeometry& g);

struct PoolGeometry {
  int kernel = 3;
  int stride = 2;
  bool ceil_mode = true;
};
int pool_out_size(int in, const PoolGeometry& g);

namespace kernels {

// Number of OpenMP threads kernels may use.
int max_threads();

// weight: [Cout, Cin, K, K]; bias: [1, Cout, 1, 1] or nullptr.
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                    const ConvGeometry& g, Tensor<T>& y);
template <typename T>
void conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const ConvGeometry& g,
                           Tensor<T>& dx);
template <typename T>
void conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                            Tensor<T>& dweight, Tensor<T>* dbias);

// weight: [Cin, Cout, K, K] (input channels first, as in the usual
// transposed-convolution layout).
template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                              const ConvGeometry& g, Tensor<T>& y);
template <typename T>
void conv_transpose2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight,
                                     const ConvGeometry& g, Tensor<T>& dx);
template <typename T>
void conv_transpose2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy,
                                      const ConvGeometry& g, Tensor<T>& dweight, Tensor<T>* dbias);

template <typename T>
void reflect_pad_forward(const Tensor<T>& x, int pad, Tensor<T>& y);
template <typename T>
void reflect_pad_backward(const Tensor<T>& dy, int pad, Tensor<T>& dx);

// Per-(sample, channel) normalisation without affine parameters. `normed`
// receives the output, `inv_std` one value per plane ([N, C, 1, 1]).
template <typename T>
void instance_norm_forward(const Tensor<T>& x, T eps, Tensor<T>& normed, Tensor<T>& inv_std);
template <typename T>
void instance_norm_backward(const Tensor<T>& dy, const Tensor<T>& normed, const Tensor<T>& inv_std,
                            Tensor<T>& dx);

template <typename T>
void maxpool2d_forward(const Tensor<T>& x, const PoolGeometry& g, Tensor<T>& y);

// Separable Gaussian along z (stack index), y and x of a [D, 1, H, W]
// stack with half-sample symmetric boundaries. Kernel radius =
// ceil(truncate * sigma).
template <typename T>
void gaussian_filter3d(const Tensor<T>& stack, double sigma, double truncate, Tensor<T>& out);

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                    const ConvGeometry& g, Tensor<T>& y);
template <typename T>
void conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight, const ConvGeometry& g,
                           Tensor<T>& dx);
template <typename T>
void conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g,
                            Tensor<T>& dweight, Tensor<T>* dbias);
template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                              const ConvGeometry& g, Tensor<T>& y);
template <typename T>
void conv_transpose2d_backward_input(const Tensor<T>& dy, const Tensor<T>& weight,
                                     const ConvGeometry& g, Tensor<T>& dx);
template <typename T>
void conv_transpose2d_backward_weight(const Tensor<T>& x, const Tensor<T>& dy,
                                      const ConvGeometry& g, Tensor<T>& dweight, Tensor<T>* dbias);
template <typename T>
void reflect_pad_forward(const Tensor<T>& x, int pad, Tensor<T>& y);
template <typename T>
void instance_norm_forward(const Tensor<T>& x, T eps, Tensor<T>& normed, Tensor<T>& inv_std);
template <typename T>
void maxpool2d_forward(const Tensor<T>& x, const PoolGeometry& g, Tensor<T>& y);

// Direct (non-separable) 3D convolution with the same boundary rule.
template <typename T>
void gaussian_filter3d(const Tensor<T>& stack, double sigma, double truncate, Tensor<T>& out);

}  // namespace reference

// Index into [0, n) mirroring about the edge samples (no edge repeat):
// -1 -> 1, n -> n - 2. Valid for |overhang| < n.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace vstain
