#include "crayon/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

namespace crayon::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.dims() != b.dims()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + dims_to_string(a.dims()) + " vs " +
                                    dims_to_string(b.dims()));
    }
}

void require_rank(const Var& a, int rank, const char* op) {
    if (a.value().rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    dims_to_string(a.dims()));
    }
}

// ---- convolution kernels -------------------------------------------------

struct ConvShape {
    int n, ci, h, w, co, k, ho, wo, stride, pad;
    int patch() const { return ci * k * k; }
    int out_plane() const { return ho * wo; }
};

ConvShape conv_shape(const Dims& x, const Dims& w, ConvGeometry g) {
    if (x.size() != 4 || w.size() != 4) {
        throw std::invalid_argument("conv2d: expected NCHW input and [Co,Ci,k,k] weight, got " + dims_to_string(x) +
                                    " and " + dims_to_string(w));
    }
    if (x[1] != w[1] || w[2] != w[3]) {
        throw std::invalid_argument("conv2d: incompatible input " + dims_to_string(x) + " and weight " +
                                    dims_to_string(w));
    }
    if (g.stride < 1 || g.pad < 0) throw std::invalid_argument("conv2d: invalid stride/padding");
    ConvShape s{x[0], x[1], x[2], x[3], w[0], w[2], 0, 0, g.stride, g.pad};
    s.ho = (s.h + 2 * s.pad - s.k) / s.stride + 1;
    s.wo = (s.w + 2 * s.pad - s.k) / s.stride + 1;
    if (s.ho <= 0 || s.wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
    return s;
}

void im2col(const double* x, const ConvShape& s, double* cols) {
    const int plane = s.out_plane();
    for (int c = 0; c < s.ci; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * s.h * s.w;
        for (int kh = 0; kh < s.k; ++kh) {
            for (int kw = 0; kw < s.k; ++kw) {
                double* row = cols + static_cast<std::size_t>((c * s.k + kh) * s.k + kw) * plane;
                for (int oh = 0; oh < s.ho; ++oh) {
                    const int ih = oh * s.stride - s.pad + kh;
                    double* out = row + oh * s.wo;
                    if (ih < 0 || ih >= s.h) {
                        std::fill(out, out + s.wo, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(ih) * s.w;
                    for (int ow = 0; ow < s.wo; ++ow) {
                        const int iw = ow * s.stride - s.pad + kw;
                        out[ow] = (iw >= 0 && iw < s.w) ? xr[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvShape& s, double* x) {
    const int plane = s.out_plane();
    for (int c = 0; c < s.ci; ++c) {
        double* xc = x + static_cast<std::size_t>(c) * s.h * s.w;
        for (int kh = 0; kh < s.k; ++kh) {
            for (int kw = 0; kw < s.k; ++kw) {
                const double* row = cols + static_cast<std::size_t>((c * s.k + kh) * s.k + kw) * plane;
                for (int oh = 0; oh < s.ho; ++oh) {
                    const int ih = oh * s.stride - s.pad + kh;
                    if (ih < 0 || ih >= s.h) continue;
                    double* xr = xc + static_cast<std::size_t>(ih) * s.w;
                    const double* in = row + oh * s.wo;
                    for (int ow = 0; ow < s.wo; ++ow) {
                        const int iw = ow * s.stride - s.pad + kw;
                        if (iw >= 0 && iw < s.w) xr[iw] += in[ow];
                    }
                }
            }
        }
    }
}

Tensor conv_forward_value(const Tensor& x, const Tensor& w, ConvGeometry g) {
    const ConvShape s = conv_shape(x.dims(), w.dims(), g);
    Tensor y({s.n, s.co, s.ho, s.wo});
    RowMat cols(s.patch(), s.out_plane());
    ConstMatMap wm(w.data(), s.co, s.patch());
    const std::size_t in_stride = static_cast<std::size_t>(s.ci) * s.h * s.w;
    const std::size_t out_stride = static_cast<std::size_t>(s.co) * s.out_plane();
    for (int n = 0; n < s.n; ++n) {
        im2col(x.data() + n * in_stride, s, cols.data());
        MatMap ym(y.data() + n * out_stride, s.co, s.out_plane());
        ym.noalias() = wm * cols;
    }
    return y;
}

Tensor conv_input_grad_value(const Tensor& gy, const Tensor& w, const Dims& x_dims, ConvGeometry g) {
    const ConvShape s = conv_shape(x_dims, w.dims(), g);
    if (gy.dims() != Dims{s.n, s.co, s.ho, s.wo}) {
        throw std::invalid_argument("conv2d_input_grad: gradient shape " + dims_to_string(gy.dims()) +
                                    " inconsistent with input " + dims_to_string(x_dims));
    }
    Tensor gx(x_dims, 0.0);
    RowMat cols(s.patch(), s.out_plane());
    ConstMatMap wm(w.data(), s.co, s.patch());
    const std::size_t in_stride = static_cast<std::size_t>(s.ci) * s.h * s.w;
    const std::size_t out_stride = static_cast<std::size_t>(s.co) * s.out_plane();
    for (int n = 0; n < s.n; ++n) {
        ConstMatMap gym(gy.data() + n * out_stride, s.co, s.out_plane());
        cols.noalias() = wm.transpose() * gym;
        col2im_add(cols.data(), s, gx.data() + n * in_stride);
    }
    return gx;
}

Tensor conv_weight_grad_value(const Tensor& x, const Tensor& gy, const Dims& w_dims, ConvGeometry g) {
    const ConvShape s = conv_shape(x.dims(), w_dims, g);
    if (gy.dims() != Dims{s.n, s.co, s.ho, s.wo}) {
        throw std::invalid_argument("conv2d_weight_grad: gradient shape " + dims_to_string(gy.dims()) +
                                    " inconsistent with input " + dims_to_string(x.dims()));
    }
    Tensor gw(w_dims, 0.0);
    MatMap gwm(gw.data(), s.co, s.patch());
    RowMat cols(s.patch(), s.out_plane());
    const std::size_t in_stride = static_cast<std::size_t>(s.ci) * s.h * s.w;
    const std::size_t out_stride = static_cast<std::size_t>(s.co) * s.out_plane();
    for (int n = 0; n < s.n; ++n) {
        im2col(x.data() + n * in_stride, s, cols.data());
        ConstMatMap gym(gy.data() + n * out_stride, s.co, s.out_plane());
        gwm.noalias() += gym * cols.transpose();
    }
    return gw;
}

struct Nchw {
    int n, c, h, w;
};

Nchw nchw(const Var& x, const char* op) {
    require_rank(x, 4, op);
    const auto& d = x.dims();
    return {d[0], d[1], d[2], d[3]};
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return Var::make(std::move(out), {a, b},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return Var::make(std::move(out), {a, b},
                     [](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{g, need[1] ? neg(g) : Var()};
                     },
                     "sub");
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return Var::make(std::move(out), {a, b},
                     [a, b](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? mul(g, b) : Var(), need[1] ? mul(g, a) : Var()};
                     },
                     "mul");
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    return Var::make(std::move(out), {a},
                     [factor](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{scale(g, factor)};
                     },
                     "scale");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var mul_const(const Var& a, const Tensor& c) {
    if (a.value().size() != c.size()) {
        throw std::invalid_argument("mul_const: shape mismatch " + dims_to_string(a.dims()) + " vs " +
                                    dims_to_string(c.dims()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
    return Var::make(std::move(out), {a},
                     [c](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul_const(g, c)}; },
                     "mul_const");
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         Tensor step(x.dims());
                         const Tensor& xv = x.value();
                         for (std::size_t i = 0; i < step.size(); ++i) step[i] = xv[i] > 0.0 ? 1.0 : 0.0;
                         return std::vector<Var>{mul_const(g, step)};
                     },
                     "relu");
}

Var exp(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = std::exp(v);
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) { return std::vector<Var>{mul(g, exp(x))}; },
                     "exp");
}

Var reshape(const Var& x, Dims dims) {
    Tensor out = x.value().reshaped(std::move(dims));
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{reshape(g, x.dims())};
                     },
                     "reshape");
}

// ---- reductions -------------------------------------------------------------

Var sum_all(const Var& x) {
    double total = 0.0;
    for (double v : x.value().values()) total += v;
    return Var::make(Tensor({1}, total), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{fill_like(g, x.dims())};
                     },
                     "sum_all");
}

Var fill_like(const Var& scalar, Dims dims) {
    if (scalar.value().size() != 1) throw std::invalid_argument("fill_like: expected a scalar");
    Tensor out(dims, scalar.value()[0]);
    return Var::make(std::move(out), {scalar},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sum_all(g)}; },
                     "fill_like");
}

Var sample_sum(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() < 1) throw std::invalid_argument("sample_sum: rank 0 input");
    const int n = xv.dim(0);
    const std::size_t per = xv.sample_size();
    Tensor out({n}, 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < per; ++j) s += xv[i * per + j];
        out[i] = s;
    }
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{sample_broadcast(g, x.dims())};
                     },
                     "sample_sum");
}

Var sample_broadcast(const Var& s, Dims dims) {
    require_rank(s, 1, "sample_broadcast");
    if (dims.empty() || dims[0] != s.dims()[0]) throw std::invalid_argument("sample_broadcast: leading dim mismatch");
    Tensor out(dims);
    const std::size_t per = out.sample_size();
    for (int i = 0; i < dims[0]; ++i) std::fill_n(out.data() + i * per, per, s.value()[i]);
    return Var::make(std::move(out), {s},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{sample_sum(g)}; },
                     "sample_broadcast");
}

// ---- convolution ------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, ConvGeometry g) {
    Tensor y = conv_forward_value(x.value(), w.value(), g);
    return Var::make(std::move(y), {x, w},
                     [x, w, g](const Var& gy, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? conv2d_input_grad(gy, w, x.dims(), g) : Var(),
                                                 need[1] ? conv2d_weight_grad(x, gy, w.dims(), g) : Var()};
                     },
                     "conv2d");
}

Var conv2d_input_grad(const Var& gy, const Var& w, Dims x_dims, ConvGeometry g) {
    Tensor gx = conv_input_grad_value(gy.value(), w.value(), x_dims, g);
    return Var::make(std::move(gx), {gy, w},
                     [gy, w, g, x_dims](const Var& up, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? conv2d(up, w, g) : Var(),
                                                 need[1] ? conv2d_weight_grad(up, gy, w.dims(), g) : Var()};
                     },
                     "conv2d_input_grad");
}

Var conv2d_weight_grad(const Var& x, const Var& gy, Dims w_dims, ConvGeometry g) {
    Tensor gw = conv_weight_grad_value(x.value(), gy.value(), w_dims, g);
    return Var::make(std::move(gw), {x, gy},
                     [x, gy, g](const Var& up, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? conv2d_input_grad(gy, up, x.dims(), g) : Var(),
                                                 need[1] ? conv2d(x, up, g) : Var()};
                     },
                     "conv2d_weight_grad");
}

Var add_channel_bias(const Var& x, const Var& b) {
    const Nchw s = nchw(x, "add_channel_bias");
    if (b.dims() != Dims{s.c}) throw std::invalid_argument("add_channel_bias: bias shape mismatch");
    Tensor out = x.value();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            const double bc = b.value()[c];
            for (std::size_t i = 0; i < plane; ++i) p[i] += bc;
        }
    }
    return Var::make(std::move(out), {x, b},
                     [](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{g, need[1] ? channel_sum(g) : Var()};
                     },
                     "add_channel_bias");
}

Var channel_sum(const Var& x) {
    const Nchw s = nchw(x, "channel_sum");
    Tensor out({s.c}, 0.0);
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* p = x.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            out[c] += acc;
        }
    }
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{channel_broadcast(g, x.dims())};
                     },
                     "channel_sum");
}

Var channel_broadcast(const Var& b, Dims dims) {
    require_rank(b, 1, "channel_broadcast");
    if (dims.size() != 4 || dims[1] != b.dims()[0]) throw std::invalid_argument("channel_broadcast: shape mismatch");
    Tensor out(dims);
    const std::size_t plane = static_cast<std::size_t>(dims[2]) * dims[3];
    for (int n = 0; n < dims[0]; ++n) {
        for (int c = 0; c < dims[1]; ++c) {
            std::fill_n(out.data() + (static_cast<std::size_t>(n) * dims[1] + c) * plane, plane, b.value()[c]);
        }
    }
    return Var::make(std::move(out), {b},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{channel_sum(g)}; },
                     "channel_broadcast");
}

Var mul_channel_const(const Var& x, std::vector<double> m) {
    const Nchw s = nchw(x, "mul_channel_const");
    if (static_cast<int>(m.size()) != s.c) throw std::invalid_argument("mul_channel_const: mask size mismatch");
    Tensor out = x.value();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] *= m[c];
        }
    }
    return Var::make(std::move(out), {x},
                     [m = std::move(m)](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{mul_channel_const(g, m)};
                     },
                     "mul_channel_const");
}

Var spatial_sum(const Var& x) {
    const Nchw s = nchw(x, "spatial_sum");
    Tensor out({s.n, s.c}, 0.0);
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* p = x.value().data() + i * plane;
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += p[j];
        out[i] = acc;
    }
    return Var::make(std::move(out), {x},
                     [s](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{spatial_broadcast(g, s.h, s.w)};
                     },
                     "spatial_sum");
}

Var spatial_broadcast(const Var& x, int h, int w) {
    require_rank(x, 2, "spatial_broadcast");
    const int n = x.dims()[0], c = x.dims()[1];
    Tensor out({n, c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < x.value().size(); ++i) std::fill_n(out.data() + i * plane, plane, x.value()[i]);
    return Var::make(std::move(out), {x},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{spatial_sum(g)}; },
                     "spatial_broadcast");
}

// ---- dense ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int ar = a.dims()[0], ac = a.dims()[1], br = b.dims()[0], bc = b.dims()[1];
    const int m = ta ? ac : ar, k = ta ? ar : ac;
    const int k2 = tb ? bc : br, n = tb ? br : bc;
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimension mismatch " + dims_to_string(a.dims()) + " x " +
                                    dims_to_string(b.dims()));
    }
    Tensor out({m, n});
    ConstMatMap am(a.value().data(), ar, ac);
    ConstMatMap bm(b.value().data(), br, bc);
    MatMap om(out.data(), m, n);
    if (!ta && !tb) om.noalias() = am * bm;
    if (ta && !tb) om.noalias() = am.transpose() * bm;
    if (!ta && tb) om.noalias() = am * bm.transpose();
    if (ta && tb) om.noalias() = am.transpose() * bm.transpose();
    return Var::make(std::move(out), {a, b},
                     [a, b, ta, tb](const Var& g, const std::vector<bool>& need) {
                         Var ga, gb;
                         if (need[0]) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
                         if (need[1]) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
                         return std::vector<Var>{ga, gb};
                     },
                     "matmul");
}

Var add_row_bias(const Var& x, const Var& b) {
    require_rank(x, 2, "add_row_bias");
    const int n = x.dims()[0], k = x.dims()[1];
    if (b.dims() != Dims{k}) throw std::invalid_argument("add_row_bias: bias shape mismatch");
    Tensor out = x.value();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] += b.value()[j];
    }
    return Var::make(std::move(out), {x, b},
                     [](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{g, need[1] ? row_sum(g) : Var()};
                     },
                     "add_row_bias");
}

Var row_sum(const Var& x) {
    require_rank(x, 2, "row_sum");
    const int n = x.dims()[0], k = x.dims()[1];
    Tensor out({k}, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) out[j] += x.value()[static_cast<std::size_t>(i) * k + j];
    }
    return Var::make(std::move(out), {x},
                     [n](const Var& g, const std::vector<bool>&) { return std::vector<Var>{row_broadcast(g, n)}; },
                     "row_sum");
}

Var row_broadcast(const Var& b, int rows) {
    require_rank(b, 1, "row_broadcast");
    const int k = b.dims()[0];
    Tensor out({rows, k});
    for (int i = 0; i < rows; ++i) std::copy_n(b.value().data(), k, out.data() + static_cast<std::size_t>(i) * k);
    return Var::make(std::move(out), {b},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{row_sum(g)}; },
                     "row_broadcast");
}

Var log_softmax(const Var& x) {
    require_rank(x, 2, "log_softmax");
    const int n = x.dims()[0], k = x.dims()[1];
    Tensor out = x.value();
    for (int i = 0; i < n; ++i) {
        double* row = out.data() + static_cast<std::size_t>(i) * k;
        const double mx = *std::max_element(row, row + k);
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (int j = 0; j < k; ++j) row[j] -= lse;
    }
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         Var probs = exp(log_softmax(x));
                         return std::vector<Var>{sub(g, mul(probs, rowsum_broadcast(g)))};
                     },
                     "log_softmax");
}

Var rowsum_broadcast(const Var& x) {
    require_rank(x, 2, "rowsum_broadcast");
    const int n = x.dims()[0], k = x.dims()[1];
    Tensor out(x.dims());
    for (int i = 0; i < n; ++i) {
        const double* row = x.value().data() + static_cast<std::size_t>(i) * k;
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += row[j];
        std::fill_n(out.data() + static_cast<std::size_t>(i) * k, k, s);
    }
    return Var::make(std::move(out), {x},
                     [](const Var& g, const std::vector<bool>&) { return std::vector<Var>{rowsum_broadcast(g)}; },
                     "rowsum_broadcast");
}

Var gather_cols(const Var& x, std::vector<int> cols) {
    require_rank(x, 2, "gather_cols");
    const int n = x.dims()[0], k = x.dims()[1];
    if (static_cast<int>(cols.size()) != n) throw std::invalid_argument("gather_cols: index count mismatch");
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        if (cols[i] < 0 || cols[i] >= k) throw std::out_of_range("gather_cols: column index out of range");
        out[i] = x.value()[static_cast<std::size_t>(i) * k + cols[i]];
    }
    return Var::make(std::move(out), {x},
                     [cols, k](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{scatter_cols(g, cols, k)};
                     },
                     "gather_cols");
}

Var scatter_cols(const Var& v, std::vector<int> cols, int k) {
    require_rank(v, 1, "scatter_cols");
    const int n = v.dims()[0];
    if (static_cast<int>(cols.size()) != n) throw std::invalid_argument("scatter_cols: index count mismatch");
    Tensor out({n, k}, 0.0);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * k + cols[i]] = v.value()[i];
    return Var::make(std::move(out), {v},
                     [cols](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{gather_cols(g, cols)};
                     },
                     "scatter_cols");
}

// ---- Grad-CAM helpers ---------------------------------------------------------

Var weighted_channel_sum(const Var& a, const Var& w) {
    const Nchw s = nchw(a, "weighted_channel_sum");
    if (w.dims() != Dims{s.n, s.c}) throw std::invalid_argument("weighted_channel_sum: weight shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    Tensor out({s.n, s.h, s.w}, 0.0);
    for (int n = 0; n < s.n; ++n) {
        double* o = out.data() + n * plane;
        for (int c = 0; c < s.c; ++c) {
            const double wc = w.value()[static_cast<std::size_t>(n) * s.c + c];
            const double* p = a.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) o[i] += wc * p[i];
        }
    }
    return Var::make(std::move(out), {a, w},
                     [a, w](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? channel_outer(w, g) : Var(),
                                                 need[1] ? spatial_dot(a, g) : Var()};
                     },
                     "weighted_channel_sum");
}

Var channel_outer(const Var& w, const Var& m) {
    require_rank(w, 2, "channel_outer");
    require_rank(m, 3, "channel_outer");
    const int n = w.dims()[0], c = w.dims()[1], h = m.dims()[1], wd = m.dims()[2];
    if (m.dims()[0] != n) throw std::invalid_argument("channel_outer: batch mismatch");
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    Tensor out({n, c, h, wd});
    for (int i = 0; i < n; ++i) {
        const double* mp = m.value().data() + i * plane;
        for (int j = 0; j < c; ++j) {
            const double wj = w.value()[static_cast<std::size_t>(i) * c + j];
            double* o = out.data() + (static_cast<std::size_t>(i) * c + j) * plane;
            for (std::size_t p = 0; p < plane; ++p) o[p] = wj * mp[p];
        }
    }
    return Var::make(std::move(out), {w, m},
                     [w, m](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? spatial_dot(g, m) : Var(),
                                                 need[1] ? weighted_channel_sum(g, w) : Var()};
                     },
                     "channel_outer");
}

Var spatial_dot(const Var& a, const Var& m) {
    const Nchw s = nchw(a, "spatial_dot");
    if (m.dims() != Dims{s.n, s.h, s.w}) throw std::invalid_argument("spatial_dot: map shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    Tensor out({s.n, s.c}, 0.0);
    for (int n = 0; n < s.n; ++n) {
        const double* mp = m.value().data() + n * plane;
        for (int c = 0; c < s.c; ++c) {
            const double* p = a.value().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i] * mp[i];
            out[static_cast<std::size_t>(n) * s.c + c] = acc;
        }
    }
    return Var::make(std::move(out), {a, m},
                     [a, m](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? channel_outer(g, m) : Var(),
                                                 need[1] ? weighted_channel_sum(a, g) : Var()};
                     },
                     "spatial_dot");
}

// ---- per-sample normalization -------------------------------------------------

Var sample_max(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() < 2) throw std::invalid_argument("sample_max: expected a batched tensor");
    const int n = xv.dim(0);
    const std::size_t per = xv.sample_size();
    if (per == 0) throw std::invalid_argument("sample_max: empty samples");
    Tensor out({n});
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) {
        const double* p = xv.data() + i * per;
        const auto best = std::max_element(p, p + per) - p;  // first maximum
        idx[i] = static_cast<int>(best);
        out[i] = p[best];
    }
    return Var::make(std::move(out), {x},
                     [x, idx](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{scatter_samples(g, idx, x.dims())};
                     },
                     "sample_max");
}

Var scatter_samples(const Var& v, std::vector<int> idx, Dims dims) {
    require_rank(v, 1, "scatter_samples");
    Tensor out(dims, 0.0);
    const std::size_t per = out.sample_size();
    for (int i = 0; i < v.dims()[0]; ++i) out[i * per + idx[i]] = v.value()[i];
    return Var::make(std::move(out), {v},
                     [idx](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{gather_samples(g, idx)};
                     },
                     "scatter_samples");
}

Var gather_samples(const Var& x, std::vector<int> idx) {
    const Tensor& xv = x.value();
    const int n = xv.dim(0);
    const std::size_t per = xv.sample_size();
    Tensor out({n});
    for (int i = 0; i < n; ++i) out[i] = xv[i * per + idx[i]];
    return Var::make(std::move(out), {x},
                     [x, idx](const Var& g, const std::vector<bool>&) {
                         return std::vector<Var>{scatter_samples(g, idx, x.dims())};
                     },
                     "gather_samples");
}

Var safe_reciprocal(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v != 0.0 ? 1.0 / v : 0.0;
    return Var::make(std::move(out), {x},
                     [x](const Var& g, const std::vector<bool>&) {
                         Var r = safe_reciprocal(x);
                         return std::vector<Var>{neg(mul(g, mul(r, r)))};
                     },
                     "safe_reciprocal");
}

Var scale_samples(const Var& x, const Var& s) {
    require_rank(s, 1, "scale_samples");
    const Tensor& xv = x.value();
    if (xv.rank() < 1 || xv.dim(0) != s.dims()[0]) throw std::invalid_argument("scale_samples: batch mismatch");
    Tensor out = xv;
    const std::size_t per = out.sample_size();
    for (int i = 0; i < xv.dim(0); ++i) {
        const double f = s.value()[i];
        double* p = out.data() + i * per;
        for (std::size_t j = 0; j < per; ++j) p[j] *= f;
    }
    return Var::make(std::move(out), {x, s},
                     [x, s](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? scale_samples(g, s) : Var(),
                                                 need[1] ? sample_dot(g, x) : Var()};
                     },
                     "scale_samples");
}

Var div_samples(const Var& x, const Var& s) {
    require_rank(s, 1, "div_samples");
    const Tensor& xv = x.value();
    if (xv.rank() < 1 || xv.dim(0) != s.dims()[0]) throw std::invalid_argument("div_samples: batch mismatch");
    Tensor out = xv;
    const std::size_t per = out.sample_size();
    for (int i = 0; i < xv.dim(0); ++i) {
        const double d = s.value()[i];
        double* p = out.data() + i * per;
        // True division keeps the largest entry at exactly 1 when s is the max.
        for (std::size_t j = 0; j < per; ++j) p[j] = d != 0.0 ? p[j] / d : 0.0;
    }
    return Var::make(std::move(out), {x, s},
                     [x, s](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{
                             need[0] ? div_samples(g, s) : Var(),
                             need[1] ? neg(mul(sample_dot(g, div_samples(x, s)), safe_reciprocal(s))) : Var()};
                     },
                     "div_samples");
}

Var sample_dot(const Var& a, const Var& b) {
    require_same(a, b, "sample_dot");
    const Tensor& av = a.value();
    const int n = av.dim(0);
    const std::size_t per = av.sample_size();
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < per; ++j) acc += av[i * per + j] * b.value()[i * per + j];
        out[i] = acc;
    }
    return Var::make(std::move(out), {a, b},
                     [a, b](const Var& g, const std::vector<bool>& need) {
                         return std::vector<Var>{need[0] ? scale_samples(b, g) : Var(),
                                                 need[1] ? scale_samples(a, g) : Var()};
                     },
                     "sample_dot");
}

}  // namespace crayon::ag
