#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "op_common.hpp"

namespace pretext {

using detail::grad_buffer;
using detail::new_impl;
using detail::normalize_axis;
using detail::record_op;

namespace {

// Collapses a reduction over `axes` into (outer, red, inner)-style iteration:
// every element index maps to (kept_index, reduced_index).
struct ReducePlan {
    Shape out_shape;         // with keepdims applied
    Shape kept_shape;        // reduced axes removed
    std::vector<int64_t> kept_strides;  // per input axis: stride into kept space (0 if reduced)
    int64_t kept_numel;
};

ReducePlan make_reduce_plan(const Shape& in, const std::vector<int>& axes_in, bool keepdims) {
    int rank = static_cast<int>(in.size());
    std::set<int> axes;
    for (int a : axes_in) axes.insert(normalize_axis(a, rank));
    if (axes.empty())
        for (int a = 0; a < rank; ++a) axes.insert(a);
    ReducePlan plan;
    for (int a = 0; a < rank; ++a) {
        bool red = axes.count(a) > 0;
        if (red) {
            if (keepdims) plan.out_shape.push_back(1);
        } else {
            plan.out_shape.push_back(in[a]);
            plan.kept_shape.push_back(in[a]);
        }
    }
    if (plan.out_shape.empty()) plan.out_shape.push_back(1);
    if (plan.kept_shape.empty()) plan.kept_shape.push_back(1);
    plan.kept_numel = shape_numel(plan.kept_shape);
    plan.kept_strides.assign(rank, 0);
    int64_t s = 1;
    for (int a = rank - 1; a >= 0; --a) {
        if (!axes.count(a)) {
            plan.kept_strides[a] = s;
            s *= in[a];
        }
    }
    return plan;
}

// Calls fn(flat_input_index, kept_index) over all elements.
template <typename Fn>
void for_each_reduce(const Shape& in, const ReducePlan& plan, Fn&& fn) {
    int rank = static_cast<int>(in.size());
    std::vector<int64_t> idx(rank, 0);
    int64_t n = shape_numel(in);
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t kept = 0;
        for (int a = 0; a < rank; ++a) kept += idx[a] * plan.kept_strides[a];
        fn(static_cast<size_t>(flat), static_cast<size_t>(kept));
        for (int a = rank; a-- > 0;) {
            if (++idx[a] < in[a]) break;
            idx[a] = 0;
        }
    }
}

}  // namespace

Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<int>& axes, bool keepdims) {
    ReducePlan plan = make_reduce_plan(x.shape(), axes, keepdims);
    auto out = new_impl(plan.out_shape, x.dtype());
    const auto& dx = x.impl()->data;
    int64_t red_count = x.numel() / plan.kept_numel;

    std::vector<int64_t> argmax;
    switch (op) {
        case ReduceOp::sum:
        case ReduceOp::mean:
            for_each_reduce(x.shape(), plan,
                            [&](size_t i, size_t k) { out->data[k] += dx[i]; });
            if (op == ReduceOp::mean)
                for (double& v : out->data) v /= static_cast<double>(red_count);
            break;
        case ReduceOp::max: {
            argmax.assign(static_cast<size_t>(plan.kept_numel), -1);
            std::fill(out->data.begin(), out->data.end(),
                      -std::numeric_limits<double>::infinity());
            for_each_reduce(x.shape(), plan, [&](size_t i, size_t k) {
                if (dx[i] > out->data[k]) {
                    out->data[k] = dx[i];
                    argmax[k] = static_cast<int64_t>(i);
                }
            });
            break;
        }
    }
    detail::round_to_dtype(*out);

    auto xi = x.impl();
    Shape in_shape = x.shape();
    record_op("reduce", {xi}, out,
              [op, xi, out, plan, in_shape, red_count, argmax = std::move(argmax)]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        switch (op) {
            case ReduceOp::sum:
                for_each_reduce(in_shape, plan, [&](size_t i, size_t k) { gx[i] += g[k]; });
                break;
            case ReduceOp::mean:
                for_each_reduce(in_shape, plan, [&](size_t i, size_t k) {
                    gx[i] += g[k] / static_cast<double>(red_count);
                });
                break;
            case ReduceOp::max:
                for (size_t k = 0; k < argmax.size(); ++k)
                    gx[static_cast<size_t>(argmax[k])] += g[k];
                break;
        }
    });
    return Tensor(out);
}

Tensor reduce_sum(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
    return reduce(ReduceOp::sum, x, axes, keepdims);
}
Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
    return reduce(ReduceOp::mean, x, axes, keepdims);
}
Tensor reduce_max(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
    return reduce(ReduceOp::max, x, axes, keepdims);
}
Tensor sum_all(const Tensor& x) { return reduce(ReduceOp::sum, x, {}, false); }
Tensor mean_all(const Tensor& x) { return reduce(ReduceOp::mean, x, {}, false); }

// --- softmax family ----------------------------------------------------------

namespace {

// Iterates rows of length `len` with stride `stride` along `axis`.
struct AxisPlan {
    int64_t len, stride, rows;
};

AxisPlan axis_plan(const Shape& shape, int axis) {
    AxisPlan p;
    p.len = shape[axis];
    p.stride = 1;
    for (size_t a = axis + 1; a < shape.size(); ++a) p.stride *= shape[a];
    p.rows = shape_numel(shape) / p.len;
    return p;
}

// Start offset of the r-th row.
int64_t row_start(const AxisPlan& p, int64_t r) {
    int64_t inner = r % p.stride;
    int64_t outer = r / p.stride;
    return outer * p.len * p.stride + inner;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    axis = normalize_axis(axis, x.rank());
    AxisPlan p = axis_plan(x.shape(), axis);
    auto out = new_impl(x.shape(), x.dtype());
    const auto& dx = x.impl()->data;
    for (int64_t r = 0; r < p.rows; ++r) {
        int64_t base = row_start(p, r);
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < p.len; ++i) mx = std::max(mx, dx[base + i * p.stride]);
        double denom = 0.0;
        for (int64_t i = 0; i < p.len; ++i) {
            double e = std::exp(dx[base + i * p.stride] - mx);
            out->data[base + i * p.stride] = e;
            denom += e;
        }
        for (int64_t i = 0; i < p.len; ++i) out->data[base + i * p.stride] /= denom;
    }
    detail::round_to_dtype(*out);

    auto xi = x.impl();
    record_op("softmax", {xi}, out, [xi, out, p]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        const auto& y = out->data;
        for (int64_t r = 0; r < p.rows; ++r) {
            int64_t base = row_start(p, r);
            double dot = 0.0;
            for (int64_t i = 0; i < p.len; ++i)
                dot += g[base + i * p.stride] * y[base + i * p.stride];
            for (int64_t i = 0; i < p.len; ++i) {
                int64_t o = base + i * p.stride;
                gx[o] += y[o] * (g[o] - dot);
            }
        }
    });
    return Tensor(out);
}

Tensor log_softmax(const Tensor& x, int axis) {
    axis = normalize_axis(axis, x.rank());
    AxisPlan p = axis_plan(x.shape(), axis);
    auto out = new_impl(x.shape(), x.dtype());
    const auto& dx = x.impl()->data;
    for (int64_t r = 0; r < p.rows; ++r) {
        int64_t base = row_start(p, r);
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < p.len; ++i) mx = std::max(mx, dx[base + i * p.stride]);
        double denom = 0.0;
        for (int64_t i = 0; i < p.len; ++i) denom += std::exp(dx[base + i * p.stride] - mx);
        double lse = mx + std::log(denom);
        for (int64_t i = 0; i < p.len; ++i)
            out->data[base + i * p.stride] = dx[base + i * p.stride] - lse;
    }
    detail::round_to_dtype(*out);

    auto xi = x.impl();
    record_op("log_softmax", {xi}, out, [xi, out, p]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        const auto& y = out->data;
        for (int64_t r = 0; r < p.rows; ++r) {
            int64_t base = row_start(p, r);
            double gsum = 0.0;
            for (int64_t i = 0; i < p.len; ++i) gsum += g[base + i * p.stride];
            for (int64_t i = 0; i < p.len; ++i) {
                int64_t o = base + i * p.stride;
                gx[o] += g[o] - std::exp(y[o]) * gsum;
            }
        }
    });
    return Tensor(out);
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
    axis = normalize_axis(axis, x.rank());
    AxisPlan p = axis_plan(x.shape(), axis);
    auto out = new_impl(x.shape(), x.dtype());
    const auto& dx = x.impl()->data;
    std::vector<double> norms(static_cast<size_t>(p.rows));
    for (int64_t r = 0; r < p.rows; ++r) {
        int64_t base = row_start(p, r);
        double sq = 0.0;
        for (int64_t i = 0; i < p.len; ++i) {
            double v = dx[base + i * p.stride];
            sq += v * v;
        }
        double norm = std::max(std::sqrt(sq), eps);
        norms[static_cast<size_t>(r)] = norm;
        for (int64_t i = 0; i < p.len; ++i)
            out->data[base + i * p.stride] = dx[base + i * p.stride] / norm;
    }
    detail::round_to_dtype(*out);

    auto xi = x.impl();
    record_op("l2_normalize", {xi}, out, [xi, out, p, eps, norms = std::move(norms)]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        const auto& dx = xi->data;
        for (int64_t r = 0; r < p.rows; ++r) {
            int64_t base = row_start(p, r);
            double norm = norms[static_cast<size_t>(r)];
            double sq = 0.0;
            for (int64_t i = 0; i < p.len; ++i) {
                double v = dx[base + i * p.stride];
                sq += v * v;
            }
            if (std::sqrt(sq) > eps) {
                double dot = 0.0;
                for (int64_t i = 0; i < p.len; ++i)
                    dot += g[base + i * p.stride] * dx[base + i * p.stride];
                double n3 = norm * norm * norm;
                for (int64_t i = 0; i < p.len; ++i) {
                    int64_t o = base + i * p.stride;
                    gx[o] += g[o] / norm - dx[o] * dot / n3;
                }
            } else {
                for (int64_t i = 0; i < p.len; ++i) {
                    int64_t o = base + i * p.stride;
                    gx[o] += g[o] / eps;
                }
            }
        }
    });
    return Tensor(out);
}

// --- shape transforms --------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape element count mismatch");
    auto out = new_impl(shape, x.dtype());
    out->data = x.impl()->data;
    auto xi = x.impl();
    record_op("reshape", {xi}, out, [xi, out]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return Tensor(out);
}

Tensor flatten(const Tensor& x, int start_axis) {
    start_axis = normalize_axis(start_axis, x.rank());
    Shape shape(x.shape().begin(), x.shape().begin() + start_axis);
    int64_t tail = 1;
    for (int a = start_axis; a < x.rank(); ++a) tail *= x.dim(a);
    shape.push_back(tail);
    return reshape(x, shape);
}

Tensor permute_axes(const Tensor& x, const std::vector<int>& perm) {
    int rank = x.rank();
    if (static_cast<int>(perm.size()) != rank)
        throw std::invalid_argument("permute_axes perm length mismatch");
    std::vector<bool> seen(rank, false);
    Shape out_shape(rank);
    for (int a = 0; a < rank; ++a) {
        int p = normalize_axis(perm[a], rank);
        if (seen[p]) throw std::invalid_argument("permute_axes: duplicate axis");
        seen[p] = true;
        out_shape[a] = x.dim(p);
    }
    auto out = new_impl(out_shape, x.dtype());

    std::vector<int64_t> in_strides(rank, 1);
    for (int a = rank - 2; a >= 0; --a) in_strides[a] = in_strides[a + 1] * x.dim(a + 1);
    std::vector<int64_t> map_strides(rank);  // stride into input per output axis
    for (int a = 0; a < rank; ++a) map_strides[a] = in_strides[perm[a]];

    const auto& dx = x.impl()->data;
    std::vector<int64_t> idx(rank, 0);
    int64_t n = x.numel();
    std::vector<int64_t> src_of(static_cast<size_t>(n));
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t src = 0;
        for (int a = 0; a < rank; ++a) src += idx[a] * map_strides[a];
        out->data[static_cast<size_t>(flat)] = dx[static_cast<size_t>(src)];
        src_of[static_cast<size_t>(flat)] = src;
        for (int a = rank; a-- > 0;) {
            if (++idx[a] < out_shape[a]) break;
            idx[a] = 0;
        }
    }

    auto xi = x.impl();
    record_op("permute_axes", {xi}, out, [xi, out, src_of = std::move(src_of)]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(src_of[i])] += g[i];
    });
    return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
    int rank = parts[0].rank();
    axis = normalize_axis(axis, rank);
    Shape out_shape = parts[0].shape();
    int64_t total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != rank) throw std::invalid_argument("concat rank mismatch");
        if (t.dtype() != parts[0].dtype())
            throw std::invalid_argument("concat dtype mismatch");
        for (int a = 0; a < rank; ++a)
            if (a != axis && t.dim(a) != out_shape[a])
                throw std::invalid_argument("concat non-axis dimension mismatch");
        total += t.dim(axis);
    }
    out_shape[axis] = total;
    auto out = new_impl(out_shape, parts[0].dtype());

    int64_t inner = 1;
    for (int a = axis + 1; a < rank; ++a) inner *= out_shape[a];
    int64_t outer = 1;
    for (int a = 0; a < axis; ++a) outer *= out_shape[a];

    int64_t offset = 0;  // running offset along the concat axis
    std::vector<int64_t> offsets;
    for (const Tensor& t : parts) {
        offsets.push_back(offset);
        int64_t len = t.dim(axis);
        const auto& src = t.impl()->data;
        for (int64_t o = 0; o < outer; ++o) {
            const double* s = src.data() + o * len * inner;
            double* dst = out->data.data() + (o * total + offset) * inner;
            std::copy(s, s + len * inner, dst);
        }
        offset += len;
    }

    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const Tensor& t : parts) impls.push_back(t.impl());
    record_op("concat", impls, out, [impls, out, offsets, outer, inner, total, axis]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        for (size_t pi = 0; pi < impls.size(); ++pi) {
            auto& part = impls[pi];
            if (!part->requires_grad) continue;
            auto& gp = grad_buffer(*part);
            int64_t len = part->shape[static_cast<size_t>(axis)];
            for (int64_t o = 0; o < outer; ++o) {
                const double* s = g.data() + (o * total + offsets[pi]) * inner;
                double* dst = gp.data() + o * len * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += s[i];
            }
        }
    });
    return Tensor(out);
}

Tensor slice(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& ranges) {
    int rank = x.rank();
    if (static_cast<int>(ranges.size()) != rank)
        throw std::invalid_argument("slice needs one range per axis");
    Shape out_shape(rank);
    for (int a = 0; a < rank; ++a) {
        auto [lo, hi] = ranges[a];
        if (lo < 0 || hi > x.dim(a) || lo >= hi)
            throw std::invalid_argument("slice range out of bounds");
        out_shape[a] = hi - lo;
    }
    auto out = new_impl(out_shape, x.dtype());

    std::vector<int64_t> in_strides(rank, 1);
    for (int a = rank - 2; a >= 0; --a) in_strides[a] = in_strides[a + 1] * x.dim(a + 1);
    const auto& dx = x.impl()->data;
    std::vector<int64_t> idx(rank, 0);
    int64_t n = shape_numel(out_shape);
    std::vector<int64_t> src_of(static_cast<size_t>(n));
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t src = 0;
        for (int a = 0; a < rank; ++a) src += (idx[a] + ranges[a].first) * in_strides[a];
        out->data[static_cast<size_t>(flat)] = dx[static_cast<size_t>(src)];
        src_of[static_cast<size_t>(flat)] = src;
        for (int a = rank; a-- > 0;) {
            if (++idx[a] < out_shape[a]) break;
            idx[a] = 0;
        }
    }

    auto xi = x.impl();
    record_op("slice", {xi}, out, [xi, out, src_of = std::move(src_of)]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(src_of[i])] += g[i];
    });
    return Tensor(out);
}

// --- loss primitives ---------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy expects [N,K] logits");
    int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy target count mismatch");
    for (int64_t t : targets)
        if (t < 0 || t >= k) throw std::invalid_argument("cross_entropy target out of range");

    auto out = new_impl({1}, logits.dtype());
    const auto& dx = logits.impl()->data;
    std::vector<double> log_probs(static_cast<size_t>(n * k));
    double total = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        const double* row = dx.data() + r * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < k; ++i) mx = std::max(mx, row[i]);
        double denom = 0.0;
        for (int64_t i = 0; i < k; ++i) denom += std::exp(row[i] - mx);
        double lse = mx + std::log(denom);
        for (int64_t i = 0; i < k; ++i) log_probs[static_cast<size_t>(r * k + i)] = row[i] - lse;
        total -= log_probs[static_cast<size_t>(r * k + targets[static_cast<size_t>(r)])];
    }
    out->data[0] = total / static_cast<double>(n);
    detail::round_to_dtype(*out);

    auto xi = logits.impl();
    record_op("cross_entropy", {xi}, out,
              [xi, out, targets, n, k, log_probs = std::move(log_probs)]() {
        const auto& g = out->grad;
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        double scale = g[0] / static_cast<double>(n);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t i = 0; i < k; ++i) {
                double p = std::exp(log_probs[static_cast<size_t>(r * k + i)]);
                double onehot = (i == targets[static_cast<size_t>(r)]) ? 1.0 : 0.0;
                gx[static_cast<size_t>(r * k + i)] += scale * (p - onehot);
            }
    });
    return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, int64_t target) {
    if (logits.rank() == 1)
        return cross_entropy(reshape(logits, {1, logits.dim(0)}), std::vector<int64_t>{target});
    return cross_entropy(logits, std::vector<int64_t>(logits.dim(0), target));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    detail::promote(pred, target);
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mse_loss shape mismatch");
    auto out = new_impl({1}, pred.dtype());
    const auto& dp = pred.impl()->data;
    const auto& dt = target.impl()->data;
    double acc = 0.0;
    for (size_t i = 0; i < dp.size(); ++i) {
        double d = dp[i] - dt[i];
        acc += d * d;
    }
    double n = static_cast<double>(dp.size());
    out->data[0] = acc / n;
    detail::round_to_dtype(*out);

    auto pi = pred.impl(), ti = target.impl();
    record_op("mse", {pi, ti}, out, [pi, ti, out, n]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        double scale = 2.0 * g[0] / n;
        if (pi->requires_grad) {
            auto& gp = grad_buffer(*pi);
            for (size_t i = 0; i < gp.size(); ++i) gp[i] += scale * (pi->data[i] - ti->data[i]);
        }
        if (ti->requires_grad) {
            auto& gt = grad_buffer(*ti);
            for (size_t i = 0; i < gt.size(); ++i) gt[i] -= scale * (pi->data[i] - ti->data[i]);
        }
    });
    return Tensor(out);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    detail::promote(logits, targets);
    if (logits.shape() != targets.shape())
        throw std::invalid_argument("bce_with_logits shape mismatch");
    auto out = new_impl({1}, logits.dtype());
    const auto& dx = logits.impl()->data;
    const auto& dt = targets.impl()->data;
    double acc = 0.0;
    for (size_t i = 0; i < dx.size(); ++i) {
        double x = dx[i], t = dt[i];
        // max(x,0) - x*t + log(1 + exp(-|x|)): stable for both signs
        acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::fabs(x)));
    }
    double n = static_cast<double>(dx.size());
    out->data[0] = acc / n;
    detail::round_to_dtype(*out);

    auto xi = logits.impl(), ti = targets.impl();
    record_op("bce_with_logits", {xi, ti}, out, [xi, ti, out, n]() {
        const auto& g = out->grad;
        if (g.empty()) return;
        double scale = g[0] / n;
        if (xi->requires_grad) {
            auto& gx = grad_buffer(*xi);
            for (size_t i = 0; i < gx.size(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-xi->data[i]));
                gx[i] += scale * (s - ti->data[i]);
            }
        }
        if (ti->requires_grad) {
            auto& gt = grad_buffer(*ti);
            for (size_t i = 0; i < gt.size(); ++i) gt[i] -= scale * xi->data[i];
        }
    });
    return Tensor(out);
}

}  // namespace pretext
