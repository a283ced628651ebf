#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "pretext/rng.hpp"
#include "pretext/tensor.hpp"

namespace pretext::nn {

struct ModuleGraph;

enum class LayerKind {
    conv,
    conv_transpose,
    linear,
    relu,
    leaky_relu,
    sigmoid,
    tanh,
    max_pool,
    global_avg_pool,
    flatten,
    reshape4,
    norm,
    lab_parallel,
};

enum class NormKind { batch, layer };

// What the graph expects as input when run over raw dataset images.
enum class InputMode { rgb, lab, lab_l };

struct Layer {
    LayerKind kind = LayerKind::relu;
    int in_ch = 0, out_ch = 0, k = 0, stride = 1, pad = 0;
    int h = 0, w = 0;      // reshape4 target (c = out_ch)
    double alpha = 0.01;   // leaky_relu slope
    NormKind norm = NormKind::layer;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers;
    std::vector<std::shared_ptr<ModuleGraph>> children;  // lab_parallel: {L, ab}
};

// Sequential layer graph. Copies share parameter storage; clone() deep-copies.
struct ModuleGraph {
    std::vector<Layer> layers;
    int feature_dim = 0;
    InputMode input_mode = InputMode::rgb;

    Tensor forward(const Tensor& x, bool training = false);
    std::vector<std::pair<std::string, Tensor>> named_tensors(const std::string& prefix = "") const;
    std::vector<Tensor> parameters() const;
    void set_requires_grad(bool value);
    ModuleGraph clone() const;
    int input_channels() const;
};

// Backbone plus prediction head; the unit that transfers.
struct CombinedNet {
    ModuleGraph backbone;
    ModuleGraph predictor;

    Tensor forward(const Tensor& x, bool training = false) {
        return predictor.forward(backbone.forward(x, training), training);
    }
    std::vector<Tensor> parameters() const;
};

// Composes without copying the backbone (parameters are shared handles).
CombinedNet attach_head(const ModuleGraph& backbone, const ModuleGraph& head);

// --- layer factories -----------------------------------------------------------

Layer conv_layer(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
                 DType dtype = DType::f32);
Layer conv_transpose_layer(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
                           DType dtype = DType::f32);
Layer linear_layer(int in_dim, int out_dim, Rng& rng, DType dtype = DType::f32);
Layer relu_layer();
Layer leaky_relu_layer(double alpha);
Layer sigmoid_layer();
Layer tanh_layer();
Layer max_pool_layer(int k, int stride);
Layer global_avg_pool_layer();
Layer flatten_layer();
Layer reshape4_layer(int c, int h, int w);
Layer norm_layer(NormKind kind, int channels, DType dtype = DType::f32);

// --- builders -------------------------------------------------------------------

struct BackboneConfig {
    int in_channels = 3;
    std::vector<int> widths = {16, 32, 64};
    NormKind norm = NormKind::layer;
    int feature_dim = 64;
    int input_size = 32;
    DType dtype = DType::f32;
};

// TinyNet: repeated [conv3x3 -> norm -> relu -> maxpool 2,2] per width, then
// global average pool -> flatten -> linear(feature_dim).
ModuleGraph build_backbone(const BackboneConfig& config, Rng& rng);

// Linear layers with relu between hidden layers; Kaiming-uniform fan-in init.
ModuleGraph build_mlp_head(const std::vector<int>& dims, bool final_relu, Rng& rng,
                           DType dtype = DType::f32);

struct DecoderConfig {
    int feature_dim = 64;
    int out_channels = 3;
    int resolution = 32;
    std::vector<int> widths = {64, 32, 16};
    enum class FinalAct { sigmoid, tanh, none } final_act = FinalAct::sigmoid;
    DType dtype = DType::f32;
};

// linear -> reshape -> [conv_transpose(k4,s2,p1) -> relu] per width -> conv3x3
// -> final activation; output is [N, out_channels, resolution, resolution].
ModuleGraph build_decoder(const DecoderConfig& config, Rng& rng);

// --- normalization ----------------------------------------------------------------

// gamma/beta are [C]. Batch kind uses running stats in eval mode and updates
// them (momentum 0.1) in training mode; running buffers may be empty tensors
// for layer kind.
Tensor normalization_forward(NormKind kind, const Tensor& x, const Tensor& gamma,
                             const Tensor& beta, double eps, Tensor running_mean,
                             Tensor running_var, bool training, double momentum = 0.1);

// --- optimizers --------------------------------------------------------------------

enum class OptKind { sgd, adam };

class Optimizer {
public:
    static Optimizer sgd(std::vector<Tensor> params, double lr_unused = 0.0,
                         double momentum = 0.9, double weight_decay = 0.0);
    static Optimizer adam(std::vector<Tensor> params, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8);

    void step(double lr);
    void zero_grad();
    int64_t step_count() const { return t_; }
    OptKind kind() const { return kind_; }

private:
    Optimizer() = default;
    OptKind kind_ = OptKind::adam;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double momentum_ = 0.9, weight_decay_ = 0.0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
};

struct LRSchedule {
    double base_lr = 1e-3;
    int step_size = 100;
    double gamma = 1.0;

    double at(int epoch) const;
};

// theta_target <- m * theta_target + (1-m) * theta_online, including buffers.
void ema_update(ModuleGraph& target, const ModuleGraph& online, double m);

// --- checkpoints ---------------------------------------------------------------------

// Format: "SSPF", version 0x01, u32 count; per tensor u16 name length, name,
// u8 rank, rank x u32 dims, f32 little-endian payload; u32 metadata length and
// a UTF-8 JSON object.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const ModuleGraph*>>& graphs,
                     const nlohmann::json& metadata);

nlohmann::json load_checkpoint(const std::string& path,
                               const std::vector<std::pair<std::string, ModuleGraph*>>& graphs);

nlohmann::json read_checkpoint_metadata(const std::string& path);

}  // namespace pretext::nn
