#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pretext/rng.hpp"

namespace pretext {

// Element precision. Storage is double either way; f32 rounds every op
// result, initializer draw and parameter update through IEEE-754 float so
// persisted values survive the 32-bit checkpoint format bit-exactly. f64 is
// the high-precision mode used by gradient checks.
enum class DType { f32, f64 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward populates it
    bool requires_grad = false;
    DType dtype = DType::f32;
    int tape_node = -1;        // node id on the tape identified by tape_id
    uint64_t tape_id = 0;      // 0 = not attached to any tape
};

// Cheap handle with shared ownership; copies alias the same storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
    static Tensor ones(const Shape& shape, DType dtype = DType::f32);
    static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
    static Tensor uniform(const Shape& shape, double lo, double hi, uint64_t seed,
                          DType dtype = DType::f32);
    static Tensor normal(const Shape& shape, double mu, double sigma, uint64_t seed,
                         DType dtype = DType::f32);
    static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng,
                          DType dtype = DType::f32);
    static Tensor normal(const Shape& shape, double mu, double sigma, Rng& rng,
                         DType dtype = DType::f32);
    static Tensor from_data(const Shape& shape, std::vector<double> data,
                            DType dtype = DType::f32);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int64_t numel() const;
    int64_t dim(int axis) const;
    DType dtype() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);

    std::span<const double> data() const;
    std::span<double> mutable_data();  // out-of-band mutation (optimizers, banks)
    double item() const;               // scalar tensors only
    double at(std::initializer_list<int64_t> idx) const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    Tensor detach() const;  // shares data, drops grad tracking
    Tensor clone() const;   // deep copy of data
    Tensor to(DType dtype) const;
    bool all_finite() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

// --- tape ------------------------------------------------------------------

struct TapeNode {
    const char* op;
    std::vector<int> inputs;
    int output;
    std::shared_ptr<TensorImpl> out_impl;
    std::function<void()> backward;  // null for leaves
};

// Reverse-mode tape. Single writer; one backward() per recording.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    size_t size() const { return nodes_.size(); }
    bool used() const { return used_; }
    uint64_t id() const { return id_; }
    const std::vector<TapeNode>& nodes() const { return nodes_; }

    void backward_from(const Tensor& loss);

    // recording internals
    int ensure_leaf(const std::shared_ptr<TensorImpl>& impl);
    int record(const char* op, const std::vector<std::shared_ptr<TensorImpl>>& inputs,
               const std::shared_ptr<TensorImpl>& output, std::function<void()> fn);

private:
    std::vector<TapeNode> nodes_;
    uint64_t id_;
    bool used_ = false;
};

// RAII activation of a tape on the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

Tape* active_tape();

// Runs backward on the tape the loss was recorded on (must be active).
void backward(const Tensor& loss);

// --- ops -------------------------------------------------------------------

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { relu, leaky_relu, sigmoid, tanh, exp, log, neg, sqrt };
enum class ReduceOp { sum, mean, max };
enum class PoolKind { max, avg };

Tensor elementwise_binary(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor unary_map(UnaryOp op, const Tensor& x, double alpha = 0.01);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha = 0.01);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor sqrt(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);
Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride, int pad);
Tensor pool2d(PoolKind kind, const Tensor& input, int k, int stride);

Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<int>& axes, bool keepdims);
Tensor reduce_sum(const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor reduce_max(const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor flatten(const Tensor& x, int start_axis = 1);
Tensor permute_axes(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// ranges: per-axis [start, stop) pairs, one per axis
Tensor slice(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& ranges);

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets);
Tensor cross_entropy(const Tensor& logits, int64_t target);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// Compares the autodiff gradient of f at x against central finite
// differences; returns the max relative error. x must be f64.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5);

// internal helpers shared by kernels; exposed for tests
namespace detail {
Shape broadcast_shape(const Shape& a, const Shape& b);
void round_to_dtype(TensorImpl& impl);
std::vector<double>& grad_buffer(TensorImpl& impl);
}  // namespace detail

}  // namespace pretext
