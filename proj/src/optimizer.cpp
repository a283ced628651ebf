#include <cmath>
#include <stdexcept>

#include "pretext/nn.hpp"

namespace pretext::nn {

Optimizer Optimizer::sgd(std::vector<Tensor> params, double, double momentum,
                         double weight_decay) {
    Optimizer opt;
    opt.kind_ = OptKind::sgd;
    opt.params_ = std::move(params);
    opt.momentum_ = momentum;
    opt.weight_decay_ = weight_decay;
    for (const Tensor& p : opt.params_)
        opt.m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    return opt;
}

Optimizer Optimizer::adam(std::vector<Tensor> params, double beta1, double beta2,
                          double eps) {
    Optimizer opt;
    opt.kind_ = OptKind::adam;
    opt.params_ = std::move(params);
    opt.beta1_ = beta1;
    opt.beta2_ = beta2;
    opt.eps_ = eps;
    for (const Tensor& p : opt.params_) {
        opt.m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        opt.v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
    return opt;
}

void Optimizer::step(double lr) {
    ++t_;
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.has_grad()) throw std::runtime_error("optimizer step with missing gradient");
        auto data = p.mutable_data();
        auto grad = p.grad();
        if (kind_ == OptKind::sgd) {
            auto& vel = m_[pi];
            for (size_t i = 0; i < data.size(); ++i) {
                double g = grad[i] + weight_decay_ * data[i];
                vel[i] = momentum_ * vel[i] + g;
                data[i] -= lr * vel[i];
            }
        } else {
            auto& m = m_[pi];
            auto& v = v_[pi];
            double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
            double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
            for (size_t i = 0; i < data.size(); ++i) {
                double g = grad[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
        detail::round_to_dtype(*p.impl());
    }
}

void Optimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace pretext::nn
