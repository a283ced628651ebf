#include <cmath>
#include <stdexcept>

#include "tasks.hpp"

namespace pretext::sup {

// --- Denoise -----------------------------------------------------------------

DenoiseSupervisor::DenoiseSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x64656e6f));
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);
    nn::DecoderConfig dc;
    dc.feature_dim = cfg_.feature_dim;
    dc.out_channels = cfg_.in_channels;
    dc.resolution = cfg_.resolution;
    dc.dtype = cfg_.dtype;
    model_.predictor = nn::build_decoder(dc, rng);
}

StepLosses DenoiseSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    std::vector<img::Image> noisy;
    noisy.reserve(batch.images.size());
    for (const auto& im : batch.images)
        noisy.push_back(img::gaussian_noise(im, cfg_.noise_sigma, rng));
    auto clean = images_to_tensor(batch.images, cfg_.dtype);
    auto recon = model_.forward(images_to_tensor(noisy, cfg_.dtype), true);
    if (recon.shape() != clean.shape())
        throw std::runtime_error("denoise decoder output shape mismatch");
    return {{"loss", mse_loss(recon, clean)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> DenoiseSupervisor::graphs() {
    return {{"backbone", &model_.backbone}, {"decoder", &model_.predictor}};
}

// --- Context (inpainting with adversarial loss) -----------------------------------

ContextSupervisor::ContextSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x636f6e74));
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);
    nn::DecoderConfig dc;
    dc.feature_dim = cfg_.feature_dim;
    dc.out_channels = cfg_.in_channels;
    dc.resolution = cfg_.resolution;
    dc.dtype = cfg_.dtype;
    model_.predictor = nn::build_decoder(dc, rng);

    // patch discriminator: conv stack -> flatten -> linear logit
    disc_.layers.push_back(nn::conv_layer(cfg_.in_channels, 16, 3, 2, 1, rng, cfg_.dtype));
    disc_.layers.push_back(nn::leaky_relu_layer(0.2));
    disc_.layers.push_back(nn::conv_layer(16, 32, 3, 2, 1, rng, cfg_.dtype));
    disc_.layers.push_back(nn::leaky_relu_layer(0.2));
    disc_.layers.push_back(nn::flatten_layer());
    int spatial = cfg_.resolution / 4;
    disc_.layers.push_back(nn::linear_layer(32 * spatial * spatial, 1, rng, cfg_.dtype));
    disc_.feature_dim = 1;
}

void ContextSupervisor::init_data_optimizer(const data::Dataset& dataset,
                                            const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    fill_ = dataset.channel_mean();
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(model_.parameters()));  // generator
    optimizers_.push_back(make_optimizer(disc_.parameters()));   // discriminator
}

ContextSupervisor::Erased ContextSupervisor::erase_batch(const data::Batch& batch,
                                                         Rng& rng) const {
    Erased out;
    out.images.reserve(batch.images.size());
    int h = batch.images[0].height, w = batch.images[0].width;
    std::vector<double> mask(batch.images.size() * static_cast<size_t>(h) * w);
    for (size_t b = 0; b < batch.images.size(); ++b) {
        auto erased = img::erase_rects(batch.images[b], 1, 4, 0.1, 0.3, fill_, rng);
        out.images.push_back(std::move(erased.image));
        for (int i = 0; i < h * w; ++i)
            mask[b * static_cast<size_t>(h) * w + static_cast<size_t>(i)] =
                erased.mask[static_cast<size_t>(i)];
    }
    out.mask = Tensor::from_data({static_cast<int64_t>(batch.images.size()), 1, h, w},
                                 std::move(mask), cfg_.dtype);
    return out;
}

Tensor ContextSupervisor::discriminator_loss(const Tensor& clean, const Tensor& fake_detached) {
    auto real_logits = disc_.forward(clean, true);
    auto fake_logits = disc_.forward(fake_detached, true);
    auto ones = Tensor::ones(real_logits.shape(), cfg_.dtype);
    auto zeros = Tensor::zeros(fake_logits.shape(), cfg_.dtype);
    return add(bce_with_logits(real_logits, ones), bce_with_logits(fake_logits, zeros));
}

std::pair<Tensor, Tensor> ContextSupervisor::generator_losses(const Tensor& erased,
                                                              const Tensor& clean,
                                                              const Tensor& mask) {
    auto recon = model_.forward(erased, true);
    // reconstruction error over erased pixels only
    auto diff = sub(recon, clean);
    auto masked = mul(diff, mask);
    auto sum_sq = sum_all(mul(masked, masked));
    double denom = 0.0;
    for (double v : mask.data()) denom += v;
    denom = std::max(denom * static_cast<double>(clean.dim(1)), 1.0);
    auto rec = mul_scalar(sum_sq, 1.0 / denom);

    auto fake_logits = disc_.forward(recon, true);
    auto adv = bce_with_logits(fake_logits, Tensor::ones(fake_logits.shape(), cfg_.dtype));
    return {rec, adv};
}

StepLosses ContextSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    auto erased = erase_batch(batch, rng);
    bool empty_mask = true;
    for (double v : erased.mask.data())
        if (v != 0.0) empty_mask = false;
    if (empty_mask) throw std::runtime_error("context task produced an empty mask");
    auto clean = images_to_tensor(batch.images, cfg_.dtype);
    auto erased_t = images_to_tensor(erased.images, cfg_.dtype);
    auto [rec, adv] = generator_losses(erased_t, clean, erased.mask);
    auto recon_detached = model_.forward(erased_t, true).detach();
    auto d_loss = discriminator_loss(clean, recon_detached);
    auto total = add(mul_scalar(rec, 1.0 - cfg_.lambda_adv),
                     mul_scalar(adv, cfg_.lambda_adv));
    return {{"rec", rec}, {"adv", adv}, {"disc", d_loss}, {"loss", total}};
}

std::map<std::string, double> ContextSupervisor::step(const data::Batch& batch, Rng& rng,
                                                      int epoch) {
    auto erased = erase_batch(batch, rng);
    auto clean = images_to_tensor(batch.images, cfg_.dtype);
    auto erased_t = images_to_tensor(erased.images, cfg_.dtype);
    std::map<std::string, double> values;
    double lr = schedule_.at(epoch);

    // discriminator first, against the current generator
    {
        Tape tape;
        TapeScope scope(tape);
        auto fake = model_.forward(erased_t, true).detach();
        auto d_loss = discriminator_loss(clean, fake);
        values["disc"] = d_loss.item();
        update(d_loss, optimizers_.at(1), lr * cfg_.d_lr_scale);
    }
    // then the generator against the updated discriminator
    {
        Tape tape;
        TapeScope scope(tape);
        auto [rec, adv] = generator_losses(erased_t, clean, erased.mask);
        auto total = add(mul_scalar(rec, 1.0 - cfg_.lambda_adv),
                         mul_scalar(adv, cfg_.lambda_adv));
        values["rec"] = rec.item();
        values["adv"] = adv.item();
        values["loss"] = total.item();
        update(total, optimizers_.at(0), lr);
    }
    return values;
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> ContextSupervisor::graphs() {
    return {{"backbone", &model_.backbone},
            {"decoder", &model_.predictor},
            {"disc", &disc_}};
}

// --- Splitbrain ---------------------------------------------------------------------

SplitbrainSupervisor::SplitbrainSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    if (cfg_.in_channels != 3)
        throw std::invalid_argument("splitbrain requires 3-channel input");
    Rng rng(mix_seed(cfg_.seed, 0x73706c74));
    int half = std::max(1, cfg_.feature_dim / 2);

    auto f_l = nn::build_backbone(backbone_config(cfg_, 1, half), rng);
    auto f_ab = nn::build_backbone(backbone_config(cfg_, 2, half), rng);

    // the transfer artifact: both half-backbones behind one Lab-splitting layer
    nn::Layer parallel;
    parallel.kind = nn::LayerKind::lab_parallel;
    parallel.children.push_back(std::make_shared<nn::ModuleGraph>(std::move(f_l)));
    parallel.children.push_back(std::make_shared<nn::ModuleGraph>(std::move(f_ab)));
    model_.backbone.layers.push_back(std::move(parallel));
    model_.backbone.feature_dim = 2 * half;
    model_.backbone.input_mode = nn::InputMode::lab;

    nn::DecoderConfig dl;
    dl.feature_dim = half;
    dl.out_channels = 2;  // predict ab planes, range [-1,1]
    dl.resolution = cfg_.resolution;
    dl.final_act = nn::DecoderConfig::FinalAct::tanh;
    dl.dtype = cfg_.dtype;
    dec_l_ = nn::build_decoder(dl, rng);

    nn::DecoderConfig da;
    da.feature_dim = half;
    da.out_channels = 1;  // predict the L plane, range [0,1]
    da.resolution = cfg_.resolution;
    da.final_act = nn::DecoderConfig::FinalAct::sigmoid;
    da.dtype = cfg_.dtype;
    dec_ab_ = nn::build_decoder(da, rng);
}

void SplitbrainSupervisor::init_data_optimizer(const data::Dataset&,
                                               const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    auto params = model_.backbone.parameters();
    auto pl = dec_l_.parameters();
    auto pab = dec_ab_.parameters();
    params.insert(params.end(), pl.begin(), pl.end());
    params.insert(params.end(), pab.begin(), pab.end());
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(std::move(params)));
}

StepLosses SplitbrainSupervisor::forward(const data::Batch& batch, Rng&, bool) {
    auto [l_planes, ab_planes] = lab_batch(batch.images, cfg_.dtype);
    auto& parallel = model_.backbone.layers.at(0);
    auto feat_l = parallel.children.at(0)->forward(l_planes, true);
    auto feat_ab = parallel.children.at(1)->forward(ab_planes, true);

    auto pred_ab = dec_l_.forward(feat_l, true);
    auto pred_l = dec_ab_.forward(feat_ab, true);
    auto l_to_ab = mse_loss(pred_ab, ab_planes.detach());
    auto ab_to_l = mse_loss(pred_l, l_planes.detach());
    return {{"l_to_ab", l_to_ab}, {"ab_to_l", ab_to_l}, {"loss", add(l_to_ab, ab_to_l)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> SplitbrainSupervisor::graphs() {
    return {{"backbone", &model_.backbone}, {"dec_l", &dec_l_}, {"dec_ab", &dec_ab_}};
}

}  // namespace pretext::sup
