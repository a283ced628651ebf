#include "pretext/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pretext {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    for (int64_t d : shape) {
        if (d < 1) {
            std::ostringstream os;
            os << "tensor dims must be positive, got " << d;
            throw std::invalid_argument(os.str());
        }
    }
}

std::shared_ptr<TensorImpl> make_impl(const Shape& shape, DType dtype) {
    check_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    return impl;
}

thread_local Tape* g_active_tape = nullptr;
std::atomic<uint64_t> g_tape_counter{1};

}  // namespace

namespace detail {

void round_to_dtype(TensorImpl& impl) {
    if (impl.dtype == DType::f32) {
        for (double& v : impl.data) v = static_cast<double>(static_cast<float>(v));
    }
}

std::vector<double>& grad_buffer(TensorImpl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    return impl.grad;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            std::ostringstream os;
            os << "shapes are not broadcastable at trailing axis " << i << ": " << da
               << " vs " << db;
            throw std::invalid_argument(os.str());
        }
        out[rank - 1 - i] = std::max(da, db);
    }
    return out;
}

}  // namespace detail

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
    return Tensor(make_impl(shape, dtype));
}

Tensor Tensor::ones(const Shape& shape, DType dtype) { return full(shape, 1.0, dtype); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
    auto impl = make_impl(shape, dtype);
    if (dtype == DType::f32) value = static_cast<double>(static_cast<float>(value));
    for (double& v : impl->data) v = value;
    return Tensor(impl);
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, uint64_t seed, DType dtype) {
    Rng rng(seed);
    return uniform(shape, lo, hi, rng, dtype);
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, Rng& rng, DType dtype) {
    auto impl = make_impl(shape, dtype);
    for (double& v : impl->data) v = rng.uniform(lo, hi);
    detail::round_to_dtype(*impl);
    return Tensor(impl);
}

Tensor Tensor::normal(const Shape& shape, double mu, double sigma, uint64_t seed, DType dtype) {
    Rng rng(seed);
    return normal(shape, mu, sigma, rng, dtype);
}

Tensor Tensor::normal(const Shape& shape, double mu, double sigma, Rng& rng, DType dtype) {
    auto impl = make_impl(shape, dtype);
    for (double& v : impl->data) v = rng.normal(mu, sigma);
    detail::round_to_dtype(*impl);
    return Tensor(impl);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, DType dtype) {
    check_shape(shape);
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
        std::ostringstream os;
        os << "data length " << data.size() << " does not match shape numel "
           << shape_numel(shape);
        throw std::invalid_argument(os.str());
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data = std::move(data);
    detail::round_to_dtype(*impl);
    return Tensor(impl);
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }

int64_t Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    return impl_->shape.at(static_cast<size_t>(axis));
}

DType Tensor::dtype() const { return impl_->dtype; }
bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor");
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        throw std::invalid_argument("at(): index rank mismatch");
    int64_t flat = 0;
    int axis = 0;
    for (int64_t i : idx) {
        flat = flat * impl_->shape[axis] + i;
        ++axis;
    }
    return impl_->data[static_cast<size_t>(flat)];
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (impl_->grad.empty()) throw std::runtime_error("tensor has no gradient");
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return detail::grad_buffer(*impl_); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = impl_->data;  // copy: detached value is a frozen snapshot
    return Tensor(impl);
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    *impl = *impl_;
    impl->tape_node = -1;
    impl->tape_id = 0;
    return Tensor(impl);
}

Tensor Tensor::to(DType dtype) const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = dtype;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    detail::round_to_dtype(*impl);
    return Tensor(impl);
}

bool Tensor::all_finite() const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

// --- Tape ------------------------------------------------------------------

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}
Tape::~Tape() = default;

int Tape::ensure_leaf(const std::shared_ptr<TensorImpl>& impl) {
    if (impl->tape_id == id_ && impl->tape_node >= 0) return impl->tape_node;
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TapeNode{"leaf", {}, id, impl, nullptr});
    impl->tape_id = id_;
    impl->tape_node = id;
    return id;
}

int Tape::record(const char* op, const std::vector<std::shared_ptr<TensorImpl>>& inputs,
                 const std::shared_ptr<TensorImpl>& output, std::function<void()> fn) {
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) ids.push_back(ensure_leaf(in));
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TapeNode{op, std::move(ids), id, output, std::move(fn)});
    output->tape_id = id_;
    output->tape_node = id;
    return id;
}

void Tape::backward_from(const Tensor& loss) {
    if (used_) throw std::runtime_error("backward already ran on this tape; record a new tape");
    if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
    const auto& impl = loss.impl();
    if (impl->tape_id != id_ || impl->tape_node < 0)
        throw std::runtime_error("loss is not attached to this tape");
    used_ = true;
    detail::grad_buffer(*impl)[0] += 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].backward) nodes_[i].backward();
    }
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
    Tape* tape = g_active_tape;
    if (tape == nullptr || loss.impl()->tape_id != tape->id())
        throw std::runtime_error("backward: loss is not recorded on the active tape");
    tape->backward_from(loss);
}

// --- grad_check ------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
    if (x.dtype() != DType::f64)
        throw std::invalid_argument("grad_check requires an f64 tensor");
    x.set_requires_grad(true);
    x.zero_grad();

    std::vector<double> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = f(x);
        if (y.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
        tape.backward_from(y);
        auto g = x.grad();
        analytic.assign(g.begin(), g.end());
    }

    auto data = x.mutable_data();
    double max_err = 0.0;
    for (size_t i = 0; i < data.size(); ++i) {
        double saved = data[i];
        data[i] = saved + eps;
        double fp = f(x).item();
        data[i] = saved - eps;
        double fm = f(x).item();
        data[i] = saved;
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

}  // namespace pretext
