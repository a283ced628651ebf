#include <cmath>
#include <stdexcept>

#include "tasks.hpp"

namespace pretext::sup {

BiGanSupervisor::BiGanSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x62696761));
    // encoder E: image -> z, via the transfer backbone
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.z_dim}, false, rng, cfg_.dtype);

    // generator G: z -> image, tanh rescaled to [0,1] in generate()
    nn::DecoderConfig dc;
    dc.feature_dim = cfg_.z_dim;
    dc.out_channels = cfg_.in_channels;
    dc.resolution = cfg_.resolution;
    dc.final_act = nn::DecoderConfig::FinalAct::tanh;
    dc.dtype = cfg_.dtype;
    gen_ = nn::build_decoder(dc, rng);

    // joint discriminator: conv features of the image concatenated with z
    d_conv_.layers.push_back(nn::conv_layer(cfg_.in_channels, 16, 3, 2, 1, rng, cfg_.dtype));
    d_conv_.layers.push_back(nn::leaky_relu_layer(0.2));
    d_conv_.layers.push_back(nn::conv_layer(16, 32, 3, 2, 1, rng, cfg_.dtype));
    d_conv_.layers.push_back(nn::leaky_relu_layer(0.2));
    d_conv_.layers.push_back(nn::flatten_layer());
    int spatial = cfg_.resolution / 4;
    d_conv_.feature_dim = 32 * spatial * spatial;
    d_mlp_ = nn::build_mlp_head({d_conv_.feature_dim + cfg_.z_dim, 128, 1}, false, rng,
                                cfg_.dtype);
}

Tensor BiGanSupervisor::generate(const Tensor& z) {
    auto raw = gen_.forward(z, true);  // tanh output in [-1,1]
    return mul_scalar(add_scalar(raw, 1.0), 0.5);
}

Tensor BiGanSupervisor::encode(const Tensor& image) { return model_.forward(image, true); }

Tensor BiGanSupervisor::discriminate(const Tensor& image, const Tensor& z) {
    auto features = d_conv_.forward(image, true);
    return d_mlp_.forward(concat({features, z}, 1), true);
}

void BiGanSupervisor::init_data_optimizer(const data::Dataset&, const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    auto ge_params = model_.parameters();
    auto g_params = gen_.parameters();
    ge_params.insert(ge_params.end(), g_params.begin(), g_params.end());
    auto d_params = d_conv_.parameters();
    auto mlp_params = d_mlp_.parameters();
    d_params.insert(d_params.end(), mlp_params.begin(), mlp_params.end());
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(std::move(ge_params)));  // G and E
    optimizers_.push_back(make_optimizer(std::move(d_params)));   // D
}

StepLosses BiGanSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    int64_t b = batch.size();
    auto x = images_to_tensor(batch.images, cfg_.dtype);
    auto z = Tensor::normal({b, cfg_.z_dim}, 0.0, 1.0, rng, cfg_.dtype);

    auto ex = encode(x);
    auto gz = generate(z);
    auto real_logits = discriminate(x, ex.detach());
    auto fake_logits = discriminate(gz.detach(), z);
    auto ones = Tensor::ones({b, 1}, cfg_.dtype);
    auto zeros = Tensor::zeros({b, 1}, cfg_.dtype);
    auto d_loss = add(bce_with_logits(real_logits, ones), bce_with_logits(fake_logits, zeros));

    // non-saturating flipped labels for G and E
    auto fake_for_g = discriminate(gz, z);
    auto real_for_e = discriminate(x, ex);
    auto ge_loss =
        add(bce_with_logits(fake_for_g, ones), bce_with_logits(real_for_e, zeros));
    return {{"disc", d_loss}, {"gen", ge_loss}, {"loss", ge_loss}};
}

std::map<std::string, double> BiGanSupervisor::step(const data::Batch& batch, Rng& rng,
                                                    int epoch) {
    int64_t b = batch.size();
    auto x = images_to_tensor(batch.images, cfg_.dtype);
    auto z = Tensor::normal({b, cfg_.z_dim}, 0.0, 1.0, rng, cfg_.dtype);
    auto ones = Tensor::ones({b, 1}, cfg_.dtype);
    auto zeros = Tensor::zeros({b, 1}, cfg_.dtype);
    std::map<std::string, double> values;
    double lr = schedule_.at(epoch);

    {
        Tape tape;
        TapeScope scope(tape);
        auto ez = encode(x).detach();
        auto gz = generate(z).detach();
        auto d_loss = add(bce_with_logits(discriminate(x, ez), ones),
                          bce_with_logits(discriminate(gz, z), zeros));
        values["disc"] = d_loss.item();
        update(d_loss, optimizers_.at(1), lr * cfg_.d_lr_scale);
    }
    {
        Tape tape;
        TapeScope scope(tape);
        auto ge_loss = add(bce_with_logits(discriminate(generate(z), z), ones),
                           bce_with_logits(discriminate(x, encode(x)), zeros));
        values["gen"] = ge_loss.item();
        values["loss"] = ge_loss.item();
        update(ge_loss, optimizers_.at(0), lr);
    }
    return values;
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> BiGanSupervisor::graphs() {
    return {{"backbone", &model_.backbone},
            {"enc_head", &model_.predictor},
            {"gen", &gen_},
            {"d_conv", &d_conv_},
            {"d_mlp", &d_mlp_}};
}

}  // namespace pretext::sup
