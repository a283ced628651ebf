#include <cmath>
#include <limits>

#include "op_common.hpp"

namespace pretext {

using detail::grad_buffer;
using detail::new_impl;
using detail::record_op;

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A^T[m,k] * B[k,n] where A is stored [k,m]
void gemm_at_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B^T[k,n] where B is stored [n,k]
void gemm_bt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

struct ConvDims {
    int64_t n, c, h, w, f, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   int stride, int pad) {
    if (input.rank() != 4 || weight.rank() != 4)
        throw std::invalid_argument("conv2d expects input [N,C,H,W] and weight [F,C,kh,kw]");
    if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d pad must be >= 0");
    ConvDims d;
    d.n = input.dim(0);
    d.c = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.f = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    if (weight.dim(1) != d.c) throw std::invalid_argument("conv2d channel mismatch");
    if (bias.rank() != 1 || bias.dim(0) != d.f)
        throw std::invalid_argument("conv2d bias must be [F]");
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
        throw std::invalid_argument("conv2d kernel larger than padded input");
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// im2col for one sample: cols is [C*kh*kw, OH*OW]
void im2col(const double* x, const ConvDims& d, int stride, int pad, double* cols) {
    int64_t out_hw = d.oh * d.ow;
    for (int64_t c = 0; c < d.c; ++c) {
        for (int64_t ki = 0; ki < d.kh; ++ki) {
            for (int64_t kj = 0; kj < d.kw; ++kj) {
                double* row = cols + ((c * d.kh + ki) * d.kw + kj) * out_hw;
                for (int64_t oi = 0; oi < d.oh; ++oi) {
                    int64_t ii = oi * stride - pad + ki;
                    for (int64_t oj = 0; oj < d.ow; ++oj) {
                        int64_t jj = oj * stride - pad + kj;
                        bool inside = ii >= 0 && ii < d.h && jj >= 0 && jj < d.w;
                        row[oi * d.ow + oj] = inside ? x[(c * d.h + ii) * d.w + jj] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* cols, const ConvDims& d, int stride, int pad, double* gx) {
    int64_t out_hw = d.oh * d.ow;
    for (int64_t c = 0; c < d.c; ++c) {
        for (int64_t ki = 0; ki < d.kh; ++ki) {
            for (int64_t kj = 0; kj < d.kw; ++kj) {
                const double* row = cols + ((c * d.kh + ki) * d.kw + kj) * out_hw;
                for (int64_t oi = 0; oi < d.oh; ++oi) {
                    int64_t ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= d.h) continue;
                    for (int64_t oj = 0; oj < d.ow; ++oj) {
                        int64_t jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= d.w) continue;
                        gx[(c * d.h + ii) * d.w + jj] += row[oi * d.ow + oj];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::promote(a, b);
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul expects rank-2 tensors");
    if (a.dim(1) != b.dim(0)) throw std::invalid_argument("matmul inner dimension mismatch");
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = new_impl({m, n}, a.dtype());
    gemm_acc(a.impl()->data.data(), b.impl()->data.data(), out->data.data(), m, k, n);
    detail::round_to_dtype(*out);

    auto ai = a.impl(), bi = b.impl();
    record_op("matmul", {ai, bi}, out, [ai, bi, out, m, k, n]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        if (ai->requires_grad)  // dA = G * B^T
            gemm_bt_acc(g.data(), bi->data.data(), grad_buffer(*ai).data(), m, n, k);
        if (bi->requires_grad)  // dB = A^T * G
            gemm_at_acc(ai->data.data(), g.data(), grad_buffer(*bi).data(), k, m, n);
    });
    return Tensor(out);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
    detail::promote(input, weight);
    ConvDims d = conv_dims(input, weight, bias, stride, pad);
    auto out = new_impl({d.n, d.f, d.oh, d.ow}, input.dtype());

    int64_t col_rows = d.c * d.kh * d.kw;
    int64_t out_hw = d.oh * d.ow;
    std::vector<double> cols(static_cast<size_t>(col_rows * out_hw));
    const auto& x = input.impl()->data;
    const auto& w = weight.impl()->data;
    const auto& bs = bias.impl()->data;
    for (int64_t n = 0; n < d.n; ++n) {
        im2col(x.data() + n * d.c * d.h * d.w, d, stride, pad, cols.data());
        double* y = out->data.data() + n * d.f * out_hw;
        gemm_acc(w.data(), cols.data(), y, d.f, col_rows, out_hw);
        for (int64_t f = 0; f < d.f; ++f) {
            double bv = bs[static_cast<size_t>(f)];
            for (int64_t o = 0; o < out_hw; ++o) y[f * out_hw + o] += bv;
        }
    }
    detail::round_to_dtype(*out);

    auto xi = input.impl(), wi = weight.impl(), bi = bias.impl();
    record_op("conv2d", {xi, wi, bi}, out, [xi, wi, bi, out, d, stride, pad]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        int64_t col_rows = d.c * d.kh * d.kw;
        int64_t out_hw = d.oh * d.ow;
        std::vector<double> cols(static_cast<size_t>(col_rows * out_hw));
        std::vector<double> gcols;
        for (int64_t n = 0; n < d.n; ++n) {
            const double* gy = g.data() + n * d.f * out_hw;
            if (wi->requires_grad || xi->requires_grad)
                im2col(xi->data.data() + n * d.c * d.h * d.w, d, stride, pad, cols.data());
            if (wi->requires_grad)  // dW += G * cols^T
                gemm_bt_acc(gy, cols.data(), grad_buffer(*wi).data(), d.f, out_hw, col_rows);
            if (xi->requires_grad) {  // dcols = W^T * G, then scatter
                gcols.assign(static_cast<size_t>(col_rows * out_hw), 0.0);
                gemm_at_acc(wi->data.data(), gy, gcols.data(), col_rows, d.f, out_hw);
                col2im_acc(gcols.data(), d, stride, pad,
                           grad_buffer(*xi).data() + n * d.c * d.h * d.w);
            }
            if (bi->requires_grad) {
                auto& gb = grad_buffer(*bi);
                for (int64_t f = 0; f < d.f; ++f) {
                    double acc = 0.0;
                    for (int64_t o = 0; o < out_hw; ++o) acc += gy[f * out_hw + o];
                    gb[static_cast<size_t>(f)] += acc;
                }
            }
        }
    });
    return Tensor(out);
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride, int pad) {
    detail::promote(input, weight);
    if (input.rank() != 4 || weight.rank() != 4)
        throw std::invalid_argument(
            "conv2d_transpose expects input [N,Cin,H,W] and weight [Cin,Cout,kh,kw]");
    if (stride < 1) throw std::invalid_argument("conv2d_transpose stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d_transpose pad must be >= 0");
    int64_t n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    int64_t co = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(0) != ci) throw std::invalid_argument("conv2d_transpose channel mismatch");
    if (bias.rank() != 1 || bias.dim(0) != co)
        throw std::invalid_argument("conv2d_transpose bias must be [Cout]");
    int64_t oh = (h - 1) * stride - 2 * pad + kh;
    int64_t ow = (w - 1) * stride - 2 * pad + kw;
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("conv2d_transpose output would be empty");

    auto out = new_impl({n, co, oh, ow}, input.dtype());
    const auto& x = input.impl()->data;
    const auto& wt = weight.impl()->data;
    const auto& bs = bias.impl()->data;
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t c = 0; c < co; ++c) {
            double bv = bs[static_cast<size_t>(c)];
            double* y = out->data.data() + (b * co + c) * oh * ow;
            for (int64_t o = 0; o < oh * ow; ++o) y[o] += bv;
        }
        for (int64_t c = 0; c < ci; ++c) {
            const double* xp = x.data() + (b * ci + c) * h * w;
            for (int64_t i = 0; i < h; ++i) {
                for (int64_t j = 0; j < w; ++j) {
                    double xv = xp[i * w + j];
                    if (xv == 0.0) continue;
                    for (int64_t ki = 0; ki < kh; ++ki) {
                        int64_t oi = i * stride - pad + ki;
                        if (oi < 0 || oi >= oh) continue;
                        for (int64_t kj = 0; kj < kw; ++kj) {
                            int64_t oj = j * stride - pad + kj;
                            if (oj < 0 || oj >= ow) continue;
                            for (int64_t c2 = 0; c2 < co; ++c2) {
                                out->data[((b * co + c2) * oh + oi) * ow + oj] +=
                                    xv * wt[((c * co + c2) * kh + ki) * kw + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    detail::round_to_dtype(*out);

    auto xi = input.impl(), wi = weight.impl(), bi = bias.impl();
    record_op("conv2d_transpose", {xi, wi, bi}, out,
              [xi, wi, bi, out, n, ci, co, h, w, kh, kw, oh, ow, stride, pad]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        // dX[b,ci,i,j] = sum_{co,ki,kj} G[b,co,i*s-p+ki,j*s-p+kj] * W[ci,co,ki,kj]
        if (xi->requires_grad) {
            auto& gx = grad_buffer(*xi);
            for (int64_t b = 0; b < n; ++b)
                for (int64_t c = 0; c < ci; ++c)
                    for (int64_t i = 0; i < h; ++i)
                        for (int64_t j = 0; j < w; ++j) {
                            double acc = 0.0;
                            for (int64_t ki = 0; ki < kh; ++ki) {
                                int64_t oi = i * stride - pad + ki;
                                if (oi < 0 || oi >= oh) continue;
                                for (int64_t kj = 0; kj < kw; ++kj) {
                                    int64_t oj = j * stride - pad + kj;
                                    if (oj < 0 || oj >= ow) continue;
                                    for (int64_t c2 = 0; c2 < co; ++c2)
                                        acc += g[((b * co + c2) * oh + oi) * ow + oj] *
                                               wi->data[((c * co + c2) * kh + ki) * kw + kj];
                                }
                            }
                            gx[((b * ci + c) * h + i) * w + j] += acc;
                        }
        }
        if (wi->requires_grad) {
            auto& gw = grad_buffer(*wi);
            for (int64_t b = 0; b < n; ++b)
                for (int64_t c = 0; c < ci; ++c)
                    for (int64_t i = 0; i < h; ++i)
                        for (int64_t j = 0; j < w; ++j) {
                            double xv = xi->data[((b * ci + c) * h + i) * w + j];
                            if (xv == 0.0) continue;
                            for (int64_t ki = 0; ki < kh; ++ki) {
                                int64_t oi = i * stride - pad + ki;
                                if (oi < 0 || oi >= oh) continue;
                                for (int64_t kj = 0; kj < kw; ++kj) {
                                    int64_t oj = j * stride - pad + kj;
                                    if (oj < 0 || oj >= ow) continue;
                                    for (int64_t c2 = 0; c2 < co; ++c2)
                                        gw[((c * co + c2) * kh + ki) * kw + kj] +=
                                            xv * g[((b * co + c2) * oh + oi) * ow + oj];
                                }
                            }
                        }
        }
        if (bi->requires_grad) {
            auto& gb = grad_buffer(*bi);
            for (int64_t b = 0; b < n; ++b)
                for (int64_t c = 0; c < co; ++c) {
                    double acc = 0.0;
                    const double* gp = g.data() + (b * co + c) * oh * ow;
                    for (int64_t o = 0; o < oh * ow; ++o) acc += gp[o];
                    gb[static_cast<size_t>(c)] += acc;
                }
        }
    });
    return Tensor(out);
}

Tensor pool2d(PoolKind kind, const Tensor& input, int k, int stride) {
    if (input.rank() != 4) throw std::invalid_argument("pool2d expects [N,C,H,W]");
    if (k < 1 || stride < 1) throw std::invalid_argument("pool2d k and stride must be >= 1");
    int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h < k || w < k) throw std::invalid_argument("pool2d window larger than input");
    int64_t oh = (h - k) / stride + 1;
    int64_t ow = (w - k) / stride + 1;
    auto out = new_impl({n, c, oh, ow}, input.dtype());

    const auto& x = input.impl()->data;
    // argmax per window, first max wins (lowest flat index)
    std::vector<int64_t> argmax;
    if (kind == PoolKind::max) argmax.assign(static_cast<size_t>(n * c * oh * ow), 0);
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* xp = x.data() + (b * c + ch) * h * w;
            double* y = out->data.data() + (b * c + ch) * oh * ow;
            for (int64_t oi = 0; oi < oh; ++oi)
                for (int64_t oj = 0; oj < ow; ++oj) {
                    if (kind == PoolKind::max) {
                        double best = -std::numeric_limits<double>::infinity();
                        int64_t best_idx = 0;
                        for (int64_t ki = 0; ki < k; ++ki)
                            for (int64_t kj = 0; kj < k; ++kj) {
                                int64_t idx = (oi * stride + ki) * w + (oj * stride + kj);
                                if (xp[idx] > best) {
                                    best = xp[idx];
                                    best_idx = idx;
                                }
                            }
                        y[oi * ow + oj] = best;
                        argmax[static_cast<size_t>(((b * c + ch) * oh + oi) * ow + oj)] = best_idx;
                    } else {
                        double acc = 0.0;
                        for (int64_t ki = 0; ki < k; ++ki)
                            for (int64_t kj = 0; kj < k; ++kj)
                                acc += xp[(oi * stride + ki) * w + (oj * stride + kj)];
                        y[oi * ow + oj] = acc / static_cast<double>(k * k);
                    }
                }
        }
    detail::round_to_dtype(*out);

    auto xi = input.impl();
    record_op(kind == PoolKind::max ? "max_pool2d" : "avg_pool2d", {xi}, out,
              [kind, xi, out, argmax = std::move(argmax), n, c, h, w, oh, ow, k, stride]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        for (int64_t b = 0; b < n; ++b)
            for (int64_t ch = 0; ch < c; ++ch) {
                double* gp = gx.data() + (b * c + ch) * h * w;
                const double* gy = g.data() + (b * c + ch) * oh * ow;
                for (int64_t oi = 0; oi < oh; ++oi)
                    for (int64_t oj = 0; oj < ow; ++oj) {
                        double gv = gy[oi * ow + oj];
                        if (kind == PoolKind::max) {
                            gp[argmax[static_cast<size_t>(((b * c + ch) * oh + oi) * ow + oj)]] += gv;
                        } else {
                            double share = gv / static_cast<double>(k * k);
                            for (int64_t ki = 0; ki < k; ++ki)
                                for (int64_t kj = 0; kj < k; ++kj)
                                    gp[(oi * stride + ki) * w + (oj * stride + kj)] += share;
                        }
                    }
            }
    });
    return Tensor(out);
}

}  // namespace pretext
