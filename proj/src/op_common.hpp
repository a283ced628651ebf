#pragma once

#include <sstream>
#include <stdexcept>

#include "pretext/tensor.hpp"

namespace pretext::detail {

inline DType promote(const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype())
        throw std::invalid_argument("mixed-precision operands are not supported");
    return a.dtype();
}

inline std::shared_ptr<TensorImpl> new_impl(const Shape& shape, DType dtype) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    return impl;
}

// Records the node when a tape is active and grads will be needed.
inline void record_op(const char* name, std::vector<std::shared_ptr<TensorImpl>> inputs,
                      const std::shared_ptr<TensorImpl>& out, std::function<void()> fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in->requires_grad;
    out->requires_grad = needs;
    Tape* tape = active_tape();
    if (tape != nullptr && needs) tape->record(name, inputs, out, std::move(fn));
}

// Row-major strides; broadcast axes (size 1 against a larger out dim) get 0.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    for (size_t i = 0; i < in.size(); ++i) {
        size_t axis = in.size() - 1 - i;
        size_t out_axis = out.size() - 1 - i;
        strides[out_axis] = (in[axis] == 1 && out[out_axis] != 1) ? 0 : s;
        s *= in[axis];
    }
    return strides;
}

inline int normalize_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        std::ostringstream os;
        os << "axis " << axis << " out of range for rank " << rank;
        throw std::invalid_argument(os.str());
    }
    return axis;
}

}  // namespace pretext::detail
