#include "pretext/nn.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pretext::nn {

namespace {

// Kaiming-uniform, fan-in, relu gain: bound = sqrt(6 / fan_in).
Tensor kaiming_uniform(const Shape& shape, int64_t fan_in, Rng& rng, DType dtype) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto t = Tensor::uniform(shape, -bound, bound, rng, dtype);
    t.set_requires_grad(true);
    return t;
}

Tensor zero_param(const Shape& shape, DType dtype) {
    auto t = Tensor::zeros(shape, dtype);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

// --- layer factories ---------------------------------------------------------

Layer conv_layer(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng, DType dtype) {
    Layer l;
    l.kind = LayerKind::conv;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.k = k;
    l.stride = stride;
    l.pad = pad;
    l.params["weight"] = kaiming_uniform({out_ch, in_ch, k, k},
                                         static_cast<int64_t>(in_ch) * k * k, rng, dtype);
    l.params["bias"] = zero_param({out_ch}, dtype);
    return l;
}

Layer conv_transpose_layer(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
                           DType dtype) {
    Layer l;
    l.kind = LayerKind::conv_transpose;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.k = k;
    l.stride = stride;
    l.pad = pad;
    l.params["weight"] = kaiming_uniform({in_ch, out_ch, k, k},
                                         static_cast<int64_t>(in_ch) * k * k, rng, dtype);
    l.params["bias"] = zero_param({out_ch}, dtype);
    return l;
}

Layer linear_layer(int in_dim, int out_dim, Rng& rng, DType dtype) {
    Layer l;
    l.kind = LayerKind::linear;
    l.in_ch = in_dim;
    l.out_ch = out_dim;
    l.params["weight"] = kaiming_uniform({in_dim, out_dim}, in_dim, rng, dtype);
    l.params["bias"] = zero_param({out_dim}, dtype);
    return l;
}

Layer relu_layer() { return Layer{}; }

Layer leaky_relu_layer(double alpha) {
    Layer l;
    l.kind = LayerKind::leaky_relu;
    l.alpha = alpha;
    return l;
}

Layer sigmoid_layer() {
    Layer l;
    l.kind = LayerKind::sigmoid;
    return l;
}

Layer tanh_layer() {
    Layer l;
    l.kind = LayerKind::tanh;
    return l;
}

Layer max_pool_layer(int k, int stride) {
    Layer l;
    l.kind = LayerKind::max_pool;
    l.k = k;
    l.stride = stride;
    return l;
}

Layer global_avg_pool_layer() {
    Layer l;
    l.kind = LayerKind::global_avg_pool;
    return l;
}

Layer flatten_layer() {
    Layer l;
    l.kind = LayerKind::flatten;
    return l;
}

Layer reshape4_layer(int c, int h, int w) {
    Layer l;
    l.kind = LayerKind::reshape4;
    l.out_ch = c;
    l.h = h;
    l.w = w;
    return l;
}

Layer norm_layer(NormKind kind, int channels, DType dtype) {
    Layer l;
    l.kind = LayerKind::norm;
    l.norm = kind;
    l.out_ch = channels;
    l.params["gamma"] = Tensor::ones({channels}, dtype).set_requires_grad(true);
    l.params["beta"] = zero_param({channels}, dtype);
    if (kind == NormKind::batch) {
        l.buffers["running_mean"] = Tensor::zeros({channels}, dtype);
        l.buffers["running_var"] = Tensor::ones({channels}, dtype);
    }
    return l;
}

// --- normalization -------------------------------------------------------------

Tensor normalization_forward(NormKind kind, const Tensor& x, const Tensor& gamma,
                             const Tensor& beta, double eps, Tensor running_mean,
                             Tensor running_var, bool training, double momentum) {
    if (x.rank() != 4 && x.rank() != 2)
        throw std::invalid_argument("normalization expects [N,C,H,W] or [N,C]");
    bool four_d = x.rank() == 4;
    int64_t channels = gamma.dim(0);
    Shape affine_shape = four_d ? Shape{1, channels, 1, 1} : Shape{1, channels};
    auto g = reshape(gamma, affine_shape);
    auto b = reshape(beta, affine_shape);
    auto eps_t = Tensor::full({1}, eps, x.dtype());

    Tensor normalized;
    if (kind == NormKind::layer) {
        std::vector<int> axes = four_d ? std::vector<int>{1, 2, 3} : std::vector<int>{1};
        auto mean = reduce_mean(x, axes, true);
        auto centered = sub(x, mean);
        auto var = reduce_mean(mul(centered, centered), axes, true);
        normalized = div(centered, sqrt(add(var, eps_t)));
    } else {
        if (x.dim(1) != channels) throw std::invalid_argument("batch norm channel mismatch");
        if (training) {
            if (x.dim(0) < 2)
                throw std::invalid_argument("batch norm requires N >= 2 in training mode");
            std::vector<int> axes = four_d ? std::vector<int>{0, 2, 3} : std::vector<int>{0};
            auto mean = reduce_mean(x, axes, true);
            auto centered = sub(x, mean);
            auto var = reduce_mean(mul(centered, centered), axes, true);
            normalized = div(centered, sqrt(add(var, eps_t)));
            // running stats are plain buffers, updated outside the tape
            auto rm = running_mean.mutable_data();
            auto rv = running_var.mutable_data();
            auto bm = mean.data();
            auto bv = var.data();
            for (int64_t c = 0; c < channels; ++c) {
                rm[c] = (1.0 - momentum) * rm[c] + momentum * bm[c];
                rv[c] = (1.0 - momentum) * rv[c] + momentum * bv[c];
            }
            detail::round_to_dtype(*running_mean.impl());
            detail::round_to_dtype(*running_var.impl());
        } else {
            auto rm = reshape(running_mean, affine_shape);
            auto rv = reshape(running_var, affine_shape);
            normalized = div(sub(x, rm), sqrt(add(rv, eps_t)));
        }
    }
    return add(mul(normalized, g), b);
}

// --- ModuleGraph -----------------------------------------------------------------

Tensor ModuleGraph::forward(const Tensor& x, bool training) {
    Tensor h = x;
    for (Layer& layer : layers) {
        switch (layer.kind) {
            case LayerKind::conv:
                h = conv2d(h, layer.params.at("weight"), layer.params.at("bias"),
                           layer.stride, layer.pad);
                break;
            case LayerKind::conv_transpose:
                h = conv2d_transpose(h, layer.params.at("weight"), layer.params.at("bias"),
                                     layer.stride, layer.pad);
                break;
            case LayerKind::linear:
                h = add(matmul(h, layer.params.at("weight")), layer.params.at("bias"));
                break;
            case LayerKind::relu:
                h = relu(h);
                break;
            case LayerKind::leaky_relu:
                h = leaky_relu(h, layer.alpha);
                break;
            case LayerKind::sigmoid:
                h = sigmoid(h);
                break;
            case LayerKind::tanh:
                h = pretext::tanh(h);
                break;
            case LayerKind::max_pool:
                h = pool2d(PoolKind::max, h, layer.k, layer.stride);
                break;
            case LayerKind::global_avg_pool:
                h = reduce_mean(h, {2, 3}, false);  // [N,C,H,W] -> [N,C]
                break;
            case LayerKind::flatten:
                h = flatten(h, 1);
                break;
            case LayerKind::reshape4:
                h = reshape(h, {h.dim(0), layer.out_ch, layer.h, layer.w});
                break;
            case LayerKind::norm: {
                Tensor rm, rv;
                if (layer.norm == NormKind::batch) {
                    rm = layer.buffers.at("running_mean");
                    rv = layer.buffers.at("running_var");
                }
                h = normalization_forward(layer.norm, h, layer.params.at("gamma"),
                                          layer.params.at("beta"), 1e-5, rm, rv, training);
                break;
            }
            case LayerKind::lab_parallel: {
                if (h.dim(1) != 3)
                    throw std::invalid_argument("lab_parallel expects 3-channel input");
                auto l_plane = slice(h, {{0, h.dim(0)}, {0, 1}, {0, h.dim(2)}, {0, h.dim(3)}});
                auto ab_plane = slice(h, {{0, h.dim(0)}, {1, 3}, {0, h.dim(2)}, {0, h.dim(3)}});
                auto fl = layer.children.at(0)->forward(l_plane, training);
                auto fab = layer.children.at(1)->forward(ab_plane, training);
                h = concat({fl, fab}, 1);
                break;
            }
        }
    }
    return h;
}

std::vector<std::pair<std::string, Tensor>> ModuleGraph::named_tensors(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
        std::string base = prefix + std::to_string(i) + ".";
        for (const auto& [k, t] : layers[i].params) out.emplace_back(base + k, t);
        for (const auto& [k, t] : layers[i].buffers) out.emplace_back(base + k, t);
        static const char* tag[] = {"L.", "ab."};
        for (size_t c = 0; c < layers[i].children.size(); ++c) {
            std::string child_prefix =
                base + (c < 2 ? tag[c] : std::to_string(c) + ".");
            auto nested = layers[i].children[c]->named_tensors(child_prefix);
            out.insert(out.end(), nested.begin(), nested.end());
        }
    }
    return out;
}

std::vector<Tensor> ModuleGraph::parameters() const {
    std::vector<Tensor> out;
    for (const Layer& layer : layers) {
        for (const auto& [k, t] : layer.params) out.push_back(t);
        for (const auto& child : layer.children) {
            auto nested = child->parameters();
            out.insert(out.end(), nested.begin(), nested.end());
        }
    }
    return out;
}

void ModuleGraph::set_requires_grad(bool value) {
    for (Layer& layer : layers) {
        for (auto& [k, t] : layer.params) t.set_requires_grad(value);
        for (auto& child : layer.children) child->set_requires_grad(value);
    }
}

ModuleGraph ModuleGraph::clone() const {
    ModuleGraph out = *this;
    for (Layer& layer : out.layers) {
        for (auto& [k, t] : layer.params) {
            bool rg = t.requires_grad();
            t = t.clone();
            t.set_requires_grad(rg);
        }
        for (auto& [k, t] : layer.buffers) t = t.clone();
        for (auto& child : layer.children)
            child = std::make_shared<ModuleGraph>(child->clone());
    }
    return out;
}

int ModuleGraph::input_channels() const {
    for (const Layer& layer : layers) {
        if (layer.kind == LayerKind::conv || layer.kind == LayerKind::linear)
            return layer.in_ch;
        if (layer.kind == LayerKind::lab_parallel) return 3;
    }
    return 0;
}

std::vector<Tensor> CombinedNet::parameters() const {
    auto out = backbone.parameters();
    auto head = predictor.parameters();
    out.insert(out.end(), head.begin(), head.end());
    return out;
}

CombinedNet attach_head(const ModuleGraph& backbone, const ModuleGraph& head) {
    return CombinedNet{backbone, head};
}

// --- builders ---------------------------------------------------------------------

ModuleGraph build_backbone(const BackboneConfig& config, Rng& rng) {
    if (config.widths.empty()) throw std::invalid_argument("backbone needs at least one width");
    if (config.feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
    ModuleGraph g;
    int in_ch = config.in_channels;
    for (int width : config.widths) {
        g.layers.push_back(conv_layer(in_ch, width, 3, 1, 1, rng, config.dtype));
        g.layers.push_back(norm_layer(config.norm, width, config.dtype));
        g.layers.push_back(relu_layer());
        g.layers.push_back(max_pool_layer(2, 2));
        in_ch = width;
    }
    g.layers.push_back(global_avg_pool_layer());
    g.layers.push_back(linear_layer(in_ch, config.feature_dim, rng, config.dtype));
    g.feature_dim = config.feature_dim;
    return g;
}

ModuleGraph build_mlp_head(const std::vector<int>& dims, bool final_relu, Rng& rng,
                           DType dtype) {
    if (dims.size() < 2) throw std::invalid_argument("mlp needs at least [in, out] dims");
    ModuleGraph g;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        g.layers.push_back(linear_layer(dims[i], dims[i + 1], rng, dtype));
        if (i + 2 < dims.size()) g.layers.push_back(relu_layer());
    }
    if (final_relu) g.layers.push_back(relu_layer());
    g.feature_dim = dims.back();
    return g;
}

ModuleGraph build_decoder(const DecoderConfig& config, Rng& rng) {
    if (config.widths.empty()) throw std::invalid_argument("decoder needs widths");
    // number of 2x upsamplings that divides the resolution evenly
    int ups = static_cast<int>(config.widths.size());
    while (ups > 0 && config.resolution % (1 << ups) != 0) --ups;
    int s0 = config.resolution / (1 << ups);

    ModuleGraph g;
    int w0 = config.widths.front();
    g.layers.push_back(linear_layer(config.feature_dim, w0 * s0 * s0, rng, config.dtype));
    g.layers.push_back(relu_layer());
    g.layers.push_back(reshape4_layer(w0, s0, s0));
    int in_ch = w0;
    for (int i = 0; i < ups; ++i) {
        int out_ch = (i + 1 < static_cast<int>(config.widths.size()))
                         ? config.widths[static_cast<size_t>(i + 1)]
                         : config.widths.back();
        g.layers.push_back(conv_transpose_layer(in_ch, out_ch, 4, 2, 1, rng, config.dtype));
        g.layers.push_back(relu_layer());
        in_ch = out_ch;
    }
    g.layers.push_back(conv_layer(in_ch, config.out_channels, 3, 1, 1, rng, config.dtype));
    switch (config.final_act) {
        case DecoderConfig::FinalAct::sigmoid: g.layers.push_back(sigmoid_layer()); break;
        case DecoderConfig::FinalAct::tanh: g.layers.push_back(tanh_layer()); break;
        case DecoderConfig::FinalAct::none: break;
    }
    g.feature_dim = config.out_channels;
    return g;
}

// --- schedules / EMA ------------------------------------------------------------------

double LRSchedule::at(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
    return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

namespace {

void ema_tensors(Tensor& target, const Tensor& online, double m) {
    if (target.shape() != online.shape())
        throw std::invalid_argument("ema_update: parameter shape mismatch");
    auto t = target.mutable_data();
    auto o = online.data();
    for (size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * o[i];
    detail::round_to_dtype(*target.impl());
}

}  // namespace

void ema_update(ModuleGraph& target, const ModuleGraph& online, double m) {
    if (m < 0.0 || m > 1.0) throw std::invalid_argument("ema momentum must be in [0,1]");
    if (target.layers.size() != online.layers.size())
        throw std::invalid_argument("ema_update: graph structure mismatch");
    for (size_t i = 0; i < target.layers.size(); ++i) {
        Layer& tl = target.layers[i];
        const Layer& ol = online.layers[i];
        if (tl.kind != ol.kind || tl.params.size() != ol.params.size())
            throw std::invalid_argument("ema_update: layer structure mismatch");
        for (auto& [key, t] : tl.params) ema_tensors(t, ol.params.at(key), m);
        for (auto& [key, t] : tl.buffers) ema_tensors(t, ol.buffers.at(key), m);
        if (tl.children.size() != ol.children.size())
            throw std::invalid_argument("ema_update: children mismatch");
        for (size_t c = 0; c < tl.children.size(); ++c)
            ema_update(*tl.children[c], *ol.children[c], m);
    }
}

}  // namespace pretext::nn
