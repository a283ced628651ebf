#include <doctest.h>

#include <cmath>

#include "pretext/tensor.hpp"

using namespace pretext;

namespace {

// Naive triple-loop matmul oracle.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p)
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            c[static_cast<size_t>(i * n + j)] = acc;
        }
    return c;
}

// Direct six-nested-loop convolution oracle.
std::vector<double> conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                                  int stride, int pad) {
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
    int64_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int64_t oh = (h + 2 * pad - kh) / stride + 1;
    int64_t ow = (ww + 2 * pad - kw) / stride + 1;
    std::vector<double> y(static_cast<size_t>(n * f * oh * ow), 0.0);
    for (int64_t bi = 0; bi < n; ++bi)
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t oi = 0; oi < oh; ++oi)
                for (int64_t oj = 0; oj < ow; ++oj) {
                    double acc = b.data()[fi];
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t ki = 0; ki < kh; ++ki)
                            for (int64_t kj = 0; kj < kw; ++kj) {
                                int64_t ii = oi * stride - pad + ki;
                                int64_t jj = oj * stride - pad + kj;
                                if (ii < 0 || ii >= h || jj < 0 || jj >= ww) continue;
                                acc += x.data()[((bi * c + ci) * h + ii) * ww + jj] *
                                       w.data()[((fi * c + ci) * kh + ki) * kw + kj];
                            }
                    y[static_cast<size_t>(((bi * f + fi) * oh + oi) * ow + oj)] = acc;
                }
    return y;
}

std::vector<double> pool_oracle(const Tensor& x, int k, int stride, bool is_max) {
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    std::vector<double> y(static_cast<size_t>(n * c * oh * ow));
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t oi = 0; oi < oh; ++oi)
                for (int64_t oj = 0; oj < ow; ++oj) {
                    double best = -1e300, acc = 0.0;
                    for (int64_t ki = 0; ki < k; ++ki)
                        for (int64_t kj = 0; kj < k; ++kj) {
                            double v = x.data()[((b * c + ch) * h + oi * stride + ki) * w +
                                                oj * stride + kj];
                            best = std::max(best, v);
                            acc += v;
                        }
                    y[static_cast<size_t>(((b * c + ch) * oh + oi) * ow + oj)] =
                        is_max ? best : acc / (k * k);
                }
    return y;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("tensor creation") {
    auto z = Tensor::zeros({2, 2});
    CHECK(z.numel() == 4);
    for (double v : z.data()) CHECK(v == 0.0);

    auto c = Tensor::full({3}, 5.0);
    for (double v : c.data()) CHECK(v == 5.0);

    auto u1 = Tensor::uniform({4}, 0.0, 1.0, 7);
    auto u2 = Tensor::uniform({4}, 0.0, 1.0, 7);
    for (int i = 0; i < 4; ++i) {
        CHECK(u1.data()[i] == u2.data()[i]);
        CHECK(u1.data()[i] >= 0.0);
        CHECK(u1.data()[i] < 1.0);
    }

    CHECK_THROWS_AS(Tensor::zeros({0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::from_data({3}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("normal init moments") {
    auto g = Tensor::normal({10000}, 1.0, 2.0, 3, DType::f64);
    double mean = 0.0;
    for (double v : g.data()) mean += v;
    mean /= g.numel();
    double var = 0.0;
    for (double v : g.data()) var += (v - mean) * (v - mean);
    var /= g.numel();
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("elementwise add/sub basics") {
    auto a = Tensor::from_data({2}, {1, 2});
    auto b = Tensor::from_data({2}, {3, 4});
    auto s = add(a, b);
    CHECK(s.data()[0] == 4.0);
    CHECK(s.data()[1] == 6.0);

    auto d = sub(a, a);
    for (double v : d.data()) CHECK(v == 0.0);
}

TEST_CASE("broadcast against brute-force oracle") {
    // [2,1] * [2] -> [2,2]
    auto a = Tensor::from_data({2, 1}, {1, 2});
    auto b = Tensor::from_data({2}, {10, 20});
    auto r = mul(a, b);
    CHECK(r.shape() == Shape{2, 2});
    CHECK(r.data()[0] == 10.0);
    CHECK(r.data()[1] == 20.0);
    CHECK(r.data()[2] == 20.0);
    CHECK(r.data()[3] == 40.0);

    // random shapes: compare against explicit index arithmetic
    Rng rng(11);
    auto x = Tensor::uniform({3, 1, 4}, -1, 1, rng, DType::f64);
    auto y = Tensor::uniform({2, 1}, -1, 1, rng, DType::f64);
    auto out = add(x, y);
    CHECK(out.shape() == Shape{3, 2, 4});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 2; ++j)
            for (int64_t k = 0; k < 4; ++k) {
                double expect = x.data()[i * 4 + k] + y.data()[j];
                CHECK(out.at({i, j, k}) == doctest::Approx(expect).epsilon(1e-12));
            }

    CHECK_THROWS_AS(add(Tensor::zeros({3}), Tensor::zeros({4})), std::invalid_argument);
}

TEST_CASE("division by zero is an error") {
    auto a = Tensor::from_data({2}, {1, 2});
    auto b = Tensor::from_data({2}, {1, 0});
    CHECK_THROWS_AS(div(a, b), std::invalid_argument);
}

TEST_CASE("matmul identity and row sums") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto r = matmul(eye, m);
    for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == m.data()[i]);

    auto ones = Tensor::from_data({2, 1}, {1, 1});
    auto rows = matmul(m, ones);
    CHECK(rows.data()[0] == 3.0);
    CHECK(rows.data()[1] == 7.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                    std::invalid_argument);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2}), Tensor::zeros({2, 3})),
                    std::invalid_argument);
}

TEST_CASE("matmul vs naive oracle on 20 random cases") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        int64_t m = rng.uniform_int(1, 6), k = rng.uniform_int(1, 6), n = rng.uniform_int(1, 6);
        auto a = Tensor::uniform({m, k}, -2, 2, rng);
        auto b = Tensor::uniform({k, n}, -2, 2, rng);
        auto c = matmul(a, b);
        CHECK(max_abs_diff(c.data(), matmul_oracle(a, b)) < 1e-5);
    }
}

TEST_CASE("conv2d simple cases") {
    auto x = Tensor::ones({1, 1, 3, 3});
    auto w = Tensor::ones({1, 1, 2, 2});
    auto b = Tensor::zeros({1});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 4.0);

    // 1x1 unit kernel is the identity map
    Rng rng(2);
    auto x2 = Tensor::uniform({2, 1, 4, 4}, 0, 1, rng);
    auto w1 = Tensor::ones({1, 1, 1, 1});
    auto y2 = conv2d(x2, w1, b, 1, 0);
    CHECK(max_abs_diff(y2.data(), {x2.data().begin(), x2.data().end()}) == 0.0);

    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1, 3, 2, 2}),
                           Tensor::zeros({1}), 1, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 4, 4}),
                           Tensor::zeros({1}), 1, 0),
                    std::invalid_argument);
}

TEST_CASE("conv2d vs six-loop oracle on 20 random cases") {
    Rng rng(9);
    for (int t = 0; t < 20; ++t) {
        int64_t n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3), f = rng.uniform_int(1, 3);
        int64_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
        int stride = static_cast<int>(rng.uniform_int(1, 2));
        int pad = static_cast<int>(rng.uniform_int(0, 2));
        int64_t h = kh + rng.uniform_int(0, 5), w = kw + rng.uniform_int(0, 5);
        auto x = Tensor::uniform({n, c, h, w}, -1, 1, rng);
        auto wt = Tensor::uniform({f, c, kh, kw}, -1, 1, rng);
        auto b = Tensor::uniform({f}, -1, 1, rng);
        auto y = conv2d(x, wt, b, stride, pad);
        CHECK(max_abs_diff(y.data(), conv2d_oracle(x, wt, b, stride, pad)) < 1e-5);
    }
    // the spec's reference shape
    Rng r2(3);
    auto x = Tensor::uniform({2, 3, 8, 8}, -1, 1, r2);
    auto w = Tensor::uniform({4, 3, 3, 3}, -1, 1, r2);
    auto b = Tensor::uniform({4}, -1, 1, r2);
    auto y = conv2d(x, w, b, 1, 1);
    CHECK(max_abs_diff(y.data(), conv2d_oracle(x, w, b, 1, 1)) < 1e-5);
}

TEST_CASE("conv2d_transpose identity and block broadcast") {
    auto b0 = Tensor::zeros({1});
    auto unit = Tensor::ones({1, 1, 1, 1});
    Rng rng(4);
    auto x = Tensor::uniform({1, 1, 3, 3}, 0, 1, rng);
    auto y = conv2d_transpose(x, unit, b0, 1, 0);
    CHECK(max_abs_diff(y.data(), {x.data().begin(), x.data().end()}) == 0.0);

    auto x2 = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w2 = Tensor::ones({1, 1, 2, 2});
    auto y2 = conv2d_transpose(x2, w2, b0, 2, 0);
    CHECK(y2.shape() == Shape{1, 1, 4, 4});
    // each input value paints its own 2x2 block
    std::vector<double> expect = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    CHECK(max_abs_diff(y2.data(), expect) == 0.0);
}

TEST_CASE("conv2d_transpose equals conv2d input gradient") {
    Rng rng(14);
    auto dy = Tensor::uniform({1, 2, 5, 5}, -1, 1, rng, DType::f64);
    auto w = Tensor::uniform({2, 3, 3, 3}, -1, 1, rng, DType::f64);  // conv weight [F,C,kh,kw]
    auto b0 = Tensor::zeros({3}, DType::f64);
    int stride = 2, pad = 1;

    // forward conv2d_transpose of dy
    auto up = conv2d_transpose(dy, w, b0, stride, pad);

    // backward-input of conv2d for output gradient dy
    int64_t h = up.dim(2), ww = up.dim(3);
    auto x = Tensor::zeros({1, 3, h, ww}, DType::f64).set_requires_grad(true);
    {
        Tape tape;
        TapeScope scope(tape);
        auto y = conv2d(x, w, Tensor::zeros({2}, DType::f64), stride, pad);
        REQUIRE(y.shape() == dy.shape());
        auto prod = mul(y, dy.detach());
        auto loss = sum_all(prod);
        tape.backward_from(loss);
    }
    auto g = x.grad();
    CHECK(max_abs_diff(up.data(), {g.begin(), g.end()}) < 1e-9);
}

TEST_CASE("pool2d basics and oracle") {
    auto c = Tensor::full({1, 1, 4, 4}, 3.25);
    auto avg = pool2d(PoolKind::avg, c, 2, 2);
    for (double v : avg.data()) CHECK(v == 3.25);

    auto m = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto mx = pool2d(PoolKind::max, m, 2, 2);
    CHECK(mx.numel() == 1);
    CHECK(mx.data()[0] == 4.0);

    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
        int k = static_cast<int>(rng.uniform_int(1, 3));
        int stride = static_cast<int>(rng.uniform_int(1, 3));
        int64_t h = k + rng.uniform_int(0, 5), w = k + rng.uniform_int(0, 5);
        auto x = Tensor::uniform({2, 2, h, w}, -1, 1, rng);
        auto ymax = pool2d(PoolKind::max, x, k, stride);
        auto yavg = pool2d(PoolKind::avg, x, k, stride);
        CHECK(max_abs_diff(ymax.data(), pool_oracle(x, k, stride, true)) < 1e-6);
        CHECK(max_abs_diff(yavg.data(), pool_oracle(x, k, stride, false)) < 1e-5);
    }

    CHECK_THROWS_AS(pool2d(PoolKind::max, Tensor::zeros({1, 1, 2, 2}), 3, 1),
                    std::invalid_argument);
}

TEST_CASE("unary maps") {
    auto x = Tensor::from_data({3}, {-1, 0, 2});
    auto r = relu(x);
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 0.0);
    CHECK(r.data()[2] == 2.0);

    CHECK(sigmoid(Tensor::zeros({1})).item() == doctest::Approx(0.5));
    CHECK_THROWS_AS(log(Tensor::from_data({2}, {1.0, 0.0})), std::invalid_argument);

    auto l = leaky_relu(Tensor::from_data({2}, {-2, 2}), 0.1);
    CHECK(l.data()[0] == doctest::Approx(-0.2));
    CHECK(l.data()[1] == 2.0);
}

TEST_CASE("reductions") {
    auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(reduce_sum(x, {0, 1}).item() == 10.0);

    auto rows = Tensor::from_data({3, 2}, {5, 7, 5, 7, 5, 7});
    auto m = reduce_mean(rows, {0});
    CHECK(m.shape() == Shape{2});
    CHECK(m.data()[0] == 5.0);
    CHECK(m.data()[1] == 7.0);

    // keepdims + random accumulation oracle
    Rng rng(6);
    auto y = Tensor::uniform({3, 4, 2}, -1, 1, rng, DType::f64);
    auto s = reduce_sum(y, {1}, true);
    CHECK(s.shape() == Shape{3, 1, 2});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t k = 0; k < 2; ++k) {
            double acc = 0.0;
            for (int64_t j = 0; j < 4; ++j) acc += y.at({i, j, k});
            CHECK(s.at({i, 0, k}) == doctest::Approx(acc).epsilon(1e-12));
        }

    auto mx = reduce_max(y, {0, 1, 2});
    double best = -1e300;
    for (double v : y.data()) best = std::max(best, v);
    CHECK(mx.item() == best);

    CHECK_THROWS_AS(reduce_sum(x, {5}), std::invalid_argument);
}

TEST_CASE("softmax family") {
    auto s = softmax(Tensor::zeros({3}), 0);
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-6));
    auto s64 = softmax(Tensor::zeros({3}, DType::f64), 0);
    for (double v : s64.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    auto n = l2_normalize(Tensor::from_data({2}, {3, 4}), 0);
    CHECK(n.data()[0] == doctest::Approx(0.6));
    CHECK(n.data()[1] == doctest::Approx(0.8));

    Rng rng(10);
    auto x = Tensor::uniform({4, 5}, -3, 3, rng, DType::f64);
    auto sm = softmax(x, 1);
    auto lsm = log_softmax(x, 1);
    for (int64_t r = 0; r < 4; ++r) {
        double rowsum = 0.0;
        for (int64_t c = 0; c < 5; ++c) {
            rowsum += sm.at({r, c});
            CHECK(lsm.at({r, c}) == doctest::Approx(std::log(sm.at({r, c}))).epsilon(1e-6));
        }
        CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));
    }

    // shift invariance
    auto shifted = softmax(add_scalar(x, 123.0), 1);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(shifted.data()[i] == doctest::Approx(sm.data()[i]).epsilon(1e-6));

    // large logits stay stable
    auto big = softmax(Tensor::from_data({2}, {1000.0, 1000.0}), 0);
    CHECK(big.data()[0] == doctest::Approx(0.5));
}

TEST_CASE("shape transforms") {
    Rng rng(3);
    auto x = Tensor::uniform({2, 3, 4}, -1, 1, rng);
    auto r = reshape(reshape(x, {4, 6}), {2, 3, 4});
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(r.data()[i] == x.data()[i]);

    auto c = concat({Tensor::from_data({2}, {1, 2}), Tensor::from_data({1}, {3})}, 0);
    CHECK(c.shape() == Shape{3});
    CHECK(c.data()[2] == 3.0);

    // slice(concat(a,b)) recovers a
    auto a = Tensor::uniform({2, 3}, -1, 1, rng);
    auto b = Tensor::uniform({2, 2}, -1, 1, rng);
    auto ab = concat({a, b}, 1);
    auto back = slice(ab, {{0, 2}, {0, 3}});
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(back.data()[i] == a.data()[i]);

    auto p = permute_axes(x, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    CHECK(p.at({1, 0, 2}) == x.at({0, 2, 1}));

    CHECK_THROWS_AS(reshape(x, {5, 5}), std::invalid_argument);
    CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 2})}, 1), std::invalid_argument);
}

TEST_CASE("loss primitives") {
    // uniform logits over 4 classes -> ln 4
    auto logits = Tensor::zeros({4});
    CHECK(cross_entropy(logits, 2).item() == doctest::Approx(std::log(4.0)).epsilon(1e-7));

    Rng rng(7);
    auto x = Tensor::uniform({5}, -1, 1, rng);
    CHECK(mse_loss(x, x).item() == 0.0);

    CHECK(bce_with_logits(Tensor::zeros({1}), Tensor::ones({1})).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-7));

    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), std::vector<int64_t>{0, 3}),
                    std::invalid_argument);
}

TEST_CASE("f32 mode rounds values to float precision") {
    auto x = Tensor::uniform({16}, 0, 1, 42, DType::f32);
    for (double v : x.data()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    auto y = mul(x, x);
    for (double v : y.data()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("determinism: same seed bit-identical") {
    auto a = Tensor::normal({64}, 0, 1, 123);
    auto b = Tensor::normal({64}, 0, 1, 123);
    for (int64_t i = 0; i < 64; ++i) CHECK(a.data()[i] == b.data()[i]);
}
