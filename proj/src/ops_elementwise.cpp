#include <cmath>

#include "op_common.hpp"

namespace pretext {

using detail::broadcast_strides;
using detail::grad_buffer;
using detail::new_impl;
using detail::record_op;

namespace {

// Walks the broadcast output grid applying fn(out_flat, a_flat, b_flat).
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, Fn&& fn) {
    size_t rank = out.size();
    std::vector<int64_t> idx(rank, 0);
    int64_t n = shape_numel(out);
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t ia = 0, ib = 0;
        for (size_t a = 0; a < rank; ++a) {
            ia += idx[a] * sa[a];
            ib += idx[a] * sb[a];
        }
        fn(static_cast<size_t>(flat), static_cast<size_t>(ia), static_cast<size_t>(ib));
        for (size_t a = rank; a-- > 0;) {
            if (++idx[a] < out[a]) break;
            idx[a] = 0;
        }
    }
}

const char* binary_name(BinaryOp op) {
    switch (op) {
        case BinaryOp::add: return "add";
        case BinaryOp::sub: return "sub";
        case BinaryOp::mul: return "mul";
        case BinaryOp::div: return "div";
    }
    return "?";
}

}  // namespace

Tensor elementwise_binary(BinaryOp op, const Tensor& a, const Tensor& b) {
    DType dtype = detail::promote(a, b);
    Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    auto out = new_impl(out_shape, dtype);
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    const auto& da = a.impl()->data;
    const auto& db = b.impl()->data;
    auto& dst = out->data;

    if (op == BinaryOp::div) {
        for (double v : db)
            if (v == 0.0) throw std::invalid_argument("division by zero element");
    }

    switch (op) {
        case BinaryOp::add:
            for_each_broadcast(out_shape, sa, sb,
                               [&](size_t o, size_t i, size_t j) { dst[o] = da[i] + db[j]; });
            break;
        case BinaryOp::sub:
            for_each_broadcast(out_shape, sa, sb,
                               [&](size_t o, size_t i, size_t j) { dst[o] = da[i] - db[j]; });
            break;
        case BinaryOp::mul:
            for_each_broadcast(out_shape, sa, sb,
                               [&](size_t o, size_t i, size_t j) { dst[o] = da[i] * db[j]; });
            break;
        case BinaryOp::div:
            for_each_broadcast(out_shape, sa, sb,
                               [&](size_t o, size_t i, size_t j) { dst[o] = da[i] / db[j]; });
            break;
    }
    detail::round_to_dtype(*out);

    auto ai = a.impl(), bi = b.impl();
    record_op(binary_name(op), {ai, bi}, out, [op, ai, bi, out, sa, sb, out_shape]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        std::vector<double>* ga = ai->requires_grad ? &grad_buffer(*ai) : nullptr;
        std::vector<double>* gb = bi->requires_grad ? &grad_buffer(*bi) : nullptr;
        for_each_broadcast(out_shape, sa, sb, [&](size_t o, size_t i, size_t j) {
            switch (op) {
                case BinaryOp::add:
                    if (ga) (*ga)[i] += g[o];
                    if (gb) (*gb)[j] += g[o];
                    break;
                case BinaryOp::sub:
                    if (ga) (*ga)[i] += g[o];
                    if (gb) (*gb)[j] -= g[o];
                    break;
                case BinaryOp::mul:
                    if (ga) (*ga)[i] += g[o] * bi->data[j];
                    if (gb) (*gb)[j] += g[o] * ai->data[i];
                    break;
                case BinaryOp::div: {
                    double inv = 1.0 / bi->data[j];
                    if (ga) (*ga)[i] += g[o] * inv;
                    if (gb) (*gb)[j] -= g[o] * ai->data[i] * inv * inv;
                    break;
                }
            }
        });
    });
    return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryOp::div, a, b); }

Tensor add_scalar(const Tensor& a, double c) {
    return add(a, Tensor::full({1}, c, a.dtype()));
}

Tensor mul_scalar(const Tensor& a, double c) {
    return mul(a, Tensor::full({1}, c, a.dtype()));
}

namespace {

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::relu: return "relu";
        case UnaryOp::leaky_relu: return "leaky_relu";
        case UnaryOp::sigmoid: return "sigmoid";
        case UnaryOp::tanh: return "tanh";
        case UnaryOp::exp: return "exp";
        case UnaryOp::log: return "log";
        case UnaryOp::neg: return "neg";
        case UnaryOp::sqrt: return "sqrt";
    }
    return "?";
}

}  // namespace

Tensor unary_map(UnaryOp op, const Tensor& x, double alpha) {
    auto out = new_impl(x.shape(), x.dtype());
    const auto& dx = x.impl()->data;
    auto& d = out->data;
    size_t n = dx.size();
    switch (op) {
        case UnaryOp::relu:
            for (size_t i = 0; i < n; ++i) d[i] = dx[i] > 0.0 ? dx[i] : 0.0;
            break;
        case UnaryOp::leaky_relu:
            for (size_t i = 0; i < n; ++i) d[i] = dx[i] > 0.0 ? dx[i] : alpha * dx[i];
            break;
        case UnaryOp::sigmoid:
            for (size_t i = 0; i < n; ++i) d[i] = 1.0 / (1.0 + std::exp(-dx[i]));
            break;
        case UnaryOp::tanh:
            for (size_t i = 0; i < n; ++i) d[i] = std::tanh(dx[i]);
            break;
        case UnaryOp::exp:
            for (size_t i = 0; i < n; ++i) d[i] = std::exp(dx[i]);
            break;
        case UnaryOp::log:
            for (size_t i = 0; i < n; ++i) {
                if (dx[i] <= 0.0)
                    throw std::invalid_argument("log requires strictly positive elements");
                d[i] = std::log(dx[i]);
            }
            break;
        case UnaryOp::neg:
            for (size_t i = 0; i < n; ++i) d[i] = -dx[i];
            break;
        case UnaryOp::sqrt:
            for (size_t i = 0; i < n; ++i) {
                if (dx[i] < 0.0) throw std::invalid_argument("sqrt of negative element");
                d[i] = std::sqrt(dx[i]);
            }
            break;
    }
    detail::round_to_dtype(*out);

    auto xi = x.impl();
    record_op(unary_name(op), {xi}, out, [op, alpha, xi, out]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        const auto& dx = xi->data;
        const auto& y = out->data;
        size_t n = dx.size();
        switch (op) {
            case UnaryOp::relu:
                for (size_t i = 0; i < n; ++i) gx[i] += dx[i] > 0.0 ? g[i] : 0.0;
                break;
            case UnaryOp::leaky_relu:
                for (size_t i = 0; i < n; ++i) gx[i] += dx[i] > 0.0 ? g[i] : alpha * g[i];
                break;
            case UnaryOp::sigmoid:
                for (size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            case UnaryOp::tanh:
                for (size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            case UnaryOp::exp:
                for (size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
                break;
            case UnaryOp::log:
                for (size_t i = 0; i < n; ++i) gx[i] += g[i] / dx[i];
                break;
            case UnaryOp::neg:
                for (size_t i = 0; i < n; ++i) gx[i] -= g[i];
                break;
            case UnaryOp::sqrt:
                for (size_t i = 0; i < n; ++i) gx[i] += g[i] * 0.5 / y[i];
                break;
        }
    });
    return Tensor(out);
}

Tensor relu(const Tensor& x) { return unary_map(UnaryOp::relu, x); }
Tensor leaky_relu(const Tensor& x, double alpha) { return unary_map(UnaryOp::leaky_relu, x, alpha); }
Tensor sigmoid(const Tensor& x) { return unary_map(UnaryOp::sigmoid, x); }
Tensor tanh(const Tensor& x) { return unary_map(UnaryOp::tanh, x); }
Tensor exp(const Tensor& x) { return unary_map(UnaryOp::exp, x); }
Tensor log(const Tensor& x) { return unary_map(UnaryOp::log, x); }
Tensor neg(const Tensor& x) { return unary_map(UnaryOp::neg, x); }
Tensor sqrt(const Tensor& x) { return unary_map(UnaryOp::sqrt, x); }

}  // namespace pretext
