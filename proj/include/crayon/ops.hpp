#pragma once

// Differentiable tensor operations. Shapes follow the NCHW convention for
// image-like tensors and [N, K] for per-sample vectors. Binary elementwise
// ops require identical shapes; broadcasting is explicit.

#include <vector>

#include "crayon/autograd.hpp"

namespace crayon::ag {

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var neg(const Var& a);
Var mul_const(const Var& a, const Tensor& c);
Var relu(const Var& x);
Var exp(const Var& x);
Var reshape(const Var& x, Dims dims);

// Reductions and their adjoint broadcasts.
Var sum_all(const Var& x);                      // -> [1]
Var fill_like(const Var& scalar, Dims dims);     // [1] -> dims
Var sample_sum(const Var& x);                   // [N, ...] -> [N]
Var sample_broadcast(const Var& s, Dims dims);  // [N] -> [N, ...]

// Convolution (square kernel, symmetric zero padding, no bias).
struct ConvGeometry {
    int stride = 1;
    int pad = 0;
};
Var conv2d(const Var& x, const Var& w, ConvGeometry g);
// Adjoint of conv2d with respect to its input / weight.
Var conv2d_input_grad(const Var& gy, const Var& w, Dims x_dims, ConvGeometry g);
Var conv2d_weight_grad(const Var& x, const Var& gy, Dims w_dims, ConvGeometry g);

Var add_channel_bias(const Var& x, const Var& b);           // [N,C,H,W] + [C]
Var channel_sum(const Var& x);                              // [N,C,H,W] -> [C]
Var channel_broadcast(const Var& b, Dims dims);             // [C] -> [N,C,H,W]
Var mul_channel_const(const Var& x, std::vector<double> m);  // [N,C,H,W] * m[C]
Var spatial_sum(const Var& x);                              // [N,C,H,W] -> [N,C]
Var spatial_broadcast(const Var& x, int h, int w);          // [N,C] -> [N,C,H,W]

// Dense layers. op(a) is a or a^T depending on the flag.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
Var add_row_bias(const Var& x, const Var& b);   // [N,K] + [K]
Var row_sum(const Var& x);                      // [N,K] -> [K]
Var row_broadcast(const Var& b, int rows);      // [K] -> [N,K]
Var log_softmax(const Var& x);                  // rowwise over [N,K]
Var rowsum_broadcast(const Var& x);             // [N,K] -> [N,K], each entry = row total
Var gather_cols(const Var& x, std::vector<int> cols);           // [N,K] -> [N]
Var scatter_cols(const Var& v, std::vector<int> cols, int k);   // [N] -> [N,K]

// Channel-weighted sums used by Grad-CAM.
Var weighted_channel_sum(const Var& a, const Var& w);  // [N,C,H,W],[N,C] -> [N,H,W]
Var channel_outer(const Var& w, const Var& m);         // [N,C],[N,H,W] -> [N,C,H,W]
Var spatial_dot(const Var& a, const Var& m);           // [N,C,H,W],[N,H,W] -> [N,C]

// Per-sample normalization helpers.
Var sample_max(const Var& x);                                   // [N,...] -> [N]
Var scatter_samples(const Var& v, std::vector<int> idx, Dims dims);  // [N] -> dims at idx
Var gather_samples(const Var& x, std::vector<int> idx);              // dims -> [N]
Var safe_reciprocal(const Var& x);  // 1/x, with 0 -> 0
Var scale_samples(const Var& x, const Var& s);  // x[n,...] * s[n]
Var div_samples(const Var& x, const Var& s);    // x[n,...] / s[n], with s[n] = 0 -> 0
Var sample_dot(const Var& a, const Var& b);     // [N,...],[N,...] -> [N]

}  // namespace crayon::ag
