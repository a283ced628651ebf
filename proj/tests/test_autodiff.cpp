#include <doctest.h>

#include <cmath>

#include "pretext/tensor.hpp"

using namespace pretext;

namespace {

// Folds any tensor into a scalar with fixed random weights so every element
// contributes to the checked loss.
Tensor weighted_sum(const Tensor& t, uint64_t seed) {
    auto w = Tensor::uniform(t.shape(), 0.5, 1.5, seed, t.dtype());
    return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("backward basics") {
    auto x = Tensor::from_data({3}, {1, 2, 3}, DType::f64).set_requires_grad(true);
    {
        Tape tape;
        TapeScope scope(tape);
        auto loss = sum_all(x);
        backward(loss);
    }
    for (double g : x.grad()) CHECK(g == 1.0);

    // quadratic: d/dx mse(x, 0) with x = [2] -> 2*x/1 = 4
    auto x2 = Tensor::from_data({1}, {2.0}, DType::f64).set_requires_grad(true);
    {
        Tape tape;
        TapeScope scope(tape);
        auto loss = mse_loss(x2, Tensor::zeros({1}, DType::f64));
        backward(loss);
    }
    CHECK(x2.grad()[0] == doctest::Approx(4.0));

    // fan-out accumulates: y = x + x -> dy/dx = 2
    auto x3 = Tensor::from_data({1}, {5.0}, DType::f64).set_requires_grad(true);
    {
        Tape tape;
        TapeScope scope(tape);
        auto loss = sum_all(add(x3, x3));
        backward(loss);
    }
    CHECK(x3.grad()[0] == 2.0);
}

TEST_CASE("backward error paths") {
    auto x = Tensor::from_data({2}, {1, 2}, DType::f64).set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    auto y = mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);  // non-scalar

    auto loss = sum_all(y);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::runtime_error);  // tape already used

    Tape other;
    CHECK_THROWS_AS(other.backward_from(loss), std::runtime_error);  // detached
}

TEST_CASE("no recording without active tape") {
    auto x = Tensor::from_data({2}, {1, 2}, DType::f64).set_requires_grad(true);
    auto y = mul(x, x);
    Tape tape;
    CHECK(tape.size() == 0);
    CHECK_THROWS_AS(tape.backward_from(sum_all(y)), std::runtime_error);
}

TEST_CASE("grad_check: exact for linear") {
    auto x = Tensor::uniform({4}, -1, 1, 1, DType::f64);
    double err = grad_check([](const Tensor& t) { return sum_all(t); }, x);
    CHECK(err < 1e-10);
}

TEST_CASE("grad_check elementwise binary ops") {
    Rng rng(21);
    for (int t = 0; t < 5; ++t) {
        auto a = Tensor::uniform({2, 3}, 0.5, 2.0, rng, DType::f64);
        auto b = Tensor::uniform({3}, 0.5, 2.0, rng, DType::f64);  // broadcast
        auto bc = b.clone();

        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(add(x, b), 1); }, a) < 1e-6);
        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(sub(x, b), 2); }, a) < 1e-6);
        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(mul(x, b), 3); }, a) < 1e-6);
        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(div(x, b), 4); }, a) < 1e-6);
        // gradient w.r.t. the second (broadcast) operand
        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(div(a, x), 5); }, bc) < 1e-6);
    }
}

TEST_CASE("grad_check unary ops") {
    Rng rng(22);
    for (int t = 0; t < 5; ++t) {
        // keep away from the relu kink
        auto raw = Tensor::uniform({2, 4}, 0.1, 2.0, rng, DType::f64);
        std::vector<double> signs(8);
        for (auto& s : signs) s = rng.bernoulli(0.5) ? 1.0 : -1.0;
        auto x = mul(raw, Tensor::from_data({2, 4}, signs, DType::f64));

        CHECK(grad_check([](const Tensor& v) { return weighted_sum(relu(v), 1); }, x) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(leaky_relu(v, 0.2), 2); }, x) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(sigmoid(v), 3); }, x) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(tanh(v), 4); }, x) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(exp(v), 5); }, x) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(neg(v), 6); }, x) < 1e-6);

        auto pos = Tensor::uniform({5}, 0.2, 3.0, rng, DType::f64);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(log(v), 7); }, pos) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(sqrt(v), 8); }, pos.clone()) < 1e-6);
    }
}

TEST_CASE("gradient of tanh vs finite differences (spec example)") {
    auto x = Tensor::uniform({6}, -2, 2, 77, DType::f64);
    double err = grad_check([](const Tensor& v) { return sum_all(tanh(v)); }, x, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("grad_check matmul and conv on 5 random shapes") {
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        int64_t m = rng.uniform_int(1, 4), k = rng.uniform_int(1, 4), n = rng.uniform_int(1, 4);
        auto a = Tensor::uniform({m, k}, -1, 1, rng, DType::f64);
        auto b = Tensor::uniform({k, n}, -1, 1, rng, DType::f64);
        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(matmul(x, b), 1); }, a) < 1e-6);
        CHECK(grad_check([&](const Tensor& x) { return weighted_sum(matmul(a, x), 2); }, b.clone()) < 1e-6);

        int64_t c = rng.uniform_int(1, 3), f = rng.uniform_int(1, 3);
        int64_t kk = rng.uniform_int(1, 3);
        int stride = static_cast<int>(rng.uniform_int(1, 2));
        int pad = static_cast<int>(rng.uniform_int(0, 1));
        int64_t h = kk + rng.uniform_int(0, 3), w2 = kk + rng.uniform_int(0, 3);
        auto img = Tensor::uniform({2, c, h, w2}, -1, 1, rng, DType::f64);
        auto w = Tensor::uniform({f, c, kk, kk}, -1, 1, rng, DType::f64);
        auto bias = Tensor::uniform({f}, -0.5, 0.5, rng, DType::f64);
        auto f_img = [&](const Tensor& x) { return weighted_sum(conv2d(x, w, bias, stride, pad), 3); };
        auto f_w = [&](const Tensor& x) { return weighted_sum(conv2d(img, x, bias, stride, pad), 4); };
        auto f_b = [&](const Tensor& x) { return weighted_sum(conv2d(img, w, x, stride, pad), 5); };
        CHECK(grad_check(f_img, img) < 1e-6);
        CHECK(grad_check(f_w, w.clone()) < 1e-6);
        CHECK(grad_check(f_b, bias.clone()) < 1e-6);
    }

    // mse(conv2d(x, w), t) w.r.t. w
    auto img = Tensor::uniform({2, 2, 5, 5}, -1, 1, rng, DType::f64);
    auto w = Tensor::uniform({3, 2, 3, 3}, -1, 1, rng, DType::f64);
    auto bias = Tensor::uniform({3}, -0.5, 0.5, rng, DType::f64);
    auto target = Tensor::uniform({2, 3, 3, 3}, 0, 1, rng, DType::f64);
    auto f_mse = [&](const Tensor& x) {
        return mse_loss(conv2d(img, x, bias, 2, 1), target);
    };
    CHECK(grad_check(f_mse, w.clone()) < 1e-6);
}

TEST_CASE("grad_check conv2d_transpose") {
    Rng rng(24);
    auto x = Tensor::uniform({1, 3, 3, 3}, -1, 1, rng, DType::f64);
    auto w = Tensor::uniform({3, 2, 3, 3}, -1, 1, rng, DType::f64);
    auto b = Tensor::uniform({2}, -0.5, 0.5, rng, DType::f64);
    CHECK(grad_check([&](const Tensor& v) {
              return weighted_sum(conv2d_transpose(v, w, b, 2, 1), 1);
          }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& v) {
              return weighted_sum(conv2d_transpose(x, v, b, 2, 1), 2);
          }, w.clone()) < 1e-6);
    CHECK(grad_check([&](const Tensor& v) {
              return weighted_sum(conv2d_transpose(x, w, v, 2, 1), 3);
          }, b.clone()) < 1e-6);
}

TEST_CASE("grad_check pooling") {
    Rng rng(25);
    auto x = Tensor::uniform({2, 2, 4, 4}, -1, 1, rng, DType::f64);
    CHECK(grad_check([](const Tensor& v) {
              return weighted_sum(pool2d(PoolKind::max, v, 2, 2), 1);
          }, x) < 1e-6);
    CHECK(grad_check([](const Tensor& v) {
              return weighted_sum(pool2d(PoolKind::avg, v, 2, 1), 2);
          }, x.clone()) < 1e-6);
}

TEST_CASE("max-pool tie-break routes to lowest flat index") {
    auto x = Tensor::full({1, 1, 2, 2}, 1.0, DType::f64).set_requires_grad(true);
    {
        Tape tape;
        TapeScope scope(tape);
        auto y = pool2d(PoolKind::max, x, 2, 2);
        backward(sum_all(y));
    }
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 0.0);
    CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("grad_check reductions and softmax family") {
    Rng rng(26);
    for (int t = 0; t < 5; ++t) {
        auto x = Tensor::uniform({3, 4}, -2, 2, rng, DType::f64);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(reduce_sum(v, {0}), 1); }, x) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(reduce_mean(v, {1}, true), 2); }, x.clone()) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(softmax(v, 1), 3); }, x.clone()) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(log_softmax(v, 1), 4); }, x.clone()) < 1e-6);
        CHECK(grad_check([](const Tensor& v) { return weighted_sum(l2_normalize(v, 1), 5); }, x.clone()) < 1e-6);
    }
    // reduce_max away from ties
    auto y = Tensor::from_data({2, 3}, {0.1, 0.9, 0.3, 0.7, 0.2, 0.5}, DType::f64);
    CHECK(grad_check([](const Tensor& v) { return weighted_sum(reduce_max(v, {1}), 6); }, y) < 1e-6);
}

TEST_CASE("grad_check shape transforms") {
    Rng rng(27);
    auto x = Tensor::uniform({2, 3, 4}, -1, 1, rng, DType::f64);
    CHECK(grad_check([](const Tensor& v) { return weighted_sum(reshape(v, {6, 4}), 1); }, x) < 1e-6);
    CHECK(grad_check([](const Tensor& v) { return weighted_sum(permute_axes(v, {2, 0, 1}), 2); }, x.clone()) < 1e-6);
    CHECK(grad_check([](const Tensor& v) {
              return weighted_sum(slice(v, {{0, 2}, {1, 3}, {0, 4}}), 3);
          }, x.clone()) < 1e-6);

    auto b = Tensor::uniform({2, 2, 4}, -1, 1, rng, DType::f64);
    CHECK(grad_check([&](const Tensor& v) { return weighted_sum(concat({v, b}, 1), 4); }, x.clone()) < 1e-6);
}

TEST_CASE("grad_check losses") {
    Rng rng(28);
    auto logits = Tensor::uniform({3, 5}, -2, 2, rng, DType::f64);
    std::vector<int64_t> targets = {1, 4, 0};
    CHECK(grad_check([&](const Tensor& v) { return cross_entropy(v, targets); }, logits) < 1e-6);

    auto pred = Tensor::uniform({2, 3}, -1, 1, rng, DType::f64);
    auto target = Tensor::uniform({2, 3}, -1, 1, rng, DType::f64);
    CHECK(grad_check([&](const Tensor& v) { return mse_loss(v, target); }, pred) < 1e-6);

    auto t01 = Tensor::from_data({4}, {0, 1, 1, 0}, DType::f64);
    auto lg = Tensor::uniform({4}, -2, 2, rng, DType::f64);
    CHECK(grad_check([&](const Tensor& v) { return bce_with_logits(v, t01); }, lg) < 1e-6);
}

TEST_CASE("grads reach every reachable tensor") {
    auto a = Tensor::uniform({2, 2}, -1, 1, 31, DType::f64).set_requires_grad(true);
    auto b = Tensor::uniform({2, 2}, -1, 1, 32, DType::f64).set_requires_grad(true);
    Tensor mid;
    {
        Tape tape;
        TapeScope scope(tape);
        mid = mul(a, b);
        auto loss = sum_all(relu(mid));
        tape.backward_from(loss);
    }
    CHECK(a.has_grad());
    CHECK(b.has_grad());
    CHECK(mid.has_grad());  // intermediate tensors get grads too
}
