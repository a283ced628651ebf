#include <cmath>
#include <stdexcept>

#include "tasks.hpp"

namespace pretext::sup {

// --- shared helpers -------------------------------------------------------------

Tensor images_to_tensor(const std::vector<img::Image>& images, DType dtype) {
    if (images.empty()) throw std::invalid_argument("empty image batch");
    int c = images[0].channels, h = images[0].height, w = images[0].width;
    std::vector<double> data(images.size() * static_cast<size_t>(c) * h * w);
    for (size_t b = 0; b < images.size(); ++b) {
        const auto& im = images[b];
        if (im.channels != c || im.height != h || im.width != w)
            throw std::invalid_argument("ragged image batch");
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    data[((b * c + ch) * h + y) * w + x] = im.at(y, x, ch);
    }
    return Tensor::from_data({static_cast<int64_t>(images.size()), c, h, w}, std::move(data),
                             dtype);
}

std::pair<Tensor, Tensor> lab_batch(const std::vector<img::Image>& images, DType dtype) {
    std::vector<Tensor> ls, abs;
    ls.reserve(images.size());
    abs.reserve(images.size());
    for (const auto& im : images) {
        auto lab = img::rgb_to_lab(im);
        auto [l, ab] = img::lab_split_tensors(lab, dtype);
        ls.push_back(reshape(l, {1, 1, im.height, im.width}));
        abs.push_back(reshape(ab, {1, 2, im.height, im.width}));
    }
    return {concat(ls, 0), concat(abs, 0)};
}

Tensor take_row(const Tensor& mat, int64_t row) {
    int64_t d = mat.dim(1);
    std::vector<double> v(mat.data().begin() + row * d, mat.data().begin() + (row + 1) * d);
    return Tensor::from_data({d}, std::move(v), mat.dtype());
}

Tensor stack_bank_rows(const contrastive::MemoryBank& bank,
                       const std::vector<int64_t>& indices) {
    std::vector<Tensor> rows;
    rows.reserve(indices.size());
    for (int64_t idx : indices) rows.push_back(reshape(bank.lookup(idx), {1, bank.dim()}));
    return concat(rows, 0);
}

img::Image default_augment(const img::Image& image, int out_size, Rng& rng) {
    return img::augment_pipeline(img::default_aug_spec(out_size), image, rng);
}

img::AugSpec task_aug_spec(const TaskConfig& cfg, int out_size) {
    img::AugSpec spec;
    spec.steps.push_back(img::CropStep{cfg.aug_crop_lo, cfg.aug_crop_hi, out_size});
    spec.steps.push_back(img::JitterStep{cfg.aug_jitter, cfg.aug_jitter, cfg.aug_jitter});
    spec.steps.push_back(img::FlipGrayStep{cfg.aug_flip_p, cfg.aug_gray_p});
    return spec;
}

img::Image task_augment(const TaskConfig& cfg, const img::Image& image, int out_size,
                        Rng& rng) {
    return img::augment_pipeline(task_aug_spec(cfg, out_size), image, rng);
}

nn::BackboneConfig backbone_config(const TaskConfig& cfg, int in_channels, int feature_dim) {
    nn::BackboneConfig bc;
    bc.in_channels = in_channels > 0 ? in_channels : cfg.in_channels;
    bc.widths = cfg.widths;
    bc.norm = cfg.norm;
    bc.feature_dim = feature_dim > 0 ? feature_dim : cfg.feature_dim;
    bc.input_size = cfg.resolution;
    bc.dtype = cfg.dtype;
    return bc;
}

// --- RotateNet -----------------------------------------------------------------

RotateNetSupervisor::RotateNetSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x726f7461));
    model_.backbone = nn::build_backbone(backbone_config(cfg_, 0, 0), rng);
    model_.predictor = nn::build_mlp_head({cfg_.feature_dim, 4}, false, rng, cfg_.dtype);
}

StepLosses RotateNetSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    std::vector<img::Image> rotated;
    std::vector<int64_t> targets;
    rotated.reserve(batch.images.size());
    for (const auto& im : batch.images) {
        int k = static_cast<int>(rng.uniform_int(0, 3));
        rotated.push_back(img::rotate90(im, k));
        targets.push_back(k);
    }
    auto logits = model_.forward(images_to_tensor(rotated, cfg_.dtype), true);
    return {{"loss", cross_entropy(logits, targets)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> RotateNetSupervisor::graphs() {
    return {{"backbone", &model_.backbone}, {"head", &model_.predictor}};
}

// --- ExemplarNet ------------------------------------------------------------------

ExemplarNetSupervisor::ExemplarNetSupervisor(TaskConfig config)
    : Supervisor(std::move(config)) {
    if (cfg_.dataset_size < 1)
        throw std::invalid_argument("exemplarnet needs dataset_size in its config");
    if (cfg_.dataset_size > cfg_.exemplar_cap)
        throw std::invalid_argument("dataset exceeds the exemplarnet class cap");
    Rng rng(mix_seed(cfg_.seed, 0x6578656d));
    model_.backbone = nn::build_backbone(backbone_config(cfg_, 0, 0), rng);
    model_.predictor = nn::build_mlp_head(
        {cfg_.feature_dim, static_cast<int>(cfg_.dataset_size)}, false, rng, cfg_.dtype);
}

StepLosses ExemplarNetSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    std::vector<img::Image> views;
    views.reserve(batch.images.size());
    for (const auto& im : batch.images) {
        img::Image base = im;
        if (cfg_.exemplar_patches) {
            // patch mode: the class exemplar is a random half-size crop
            int half = std::max(4, im.height / 2);
            int top = static_cast<int>(rng.uniform_int(0, im.height - half));
            int left = static_cast<int>(rng.uniform_int(0, im.width - half));
            base = img::crop(im, top, left, half, half);
        }
        views.push_back(task_augment(cfg_, base, cfg_.resolution, rng));
    }
    auto logits = model_.forward(images_to_tensor(views, cfg_.dtype), true);
    return {{"loss", cross_entropy(logits, batch.indices)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> ExemplarNetSupervisor::graphs() {
    return {{"backbone", &model_.backbone}, {"head", &model_.predictor}};
}

// --- Jigsaw ------------------------------------------------------------------------

JigsawSupervisor::JigsawSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x6a696773));
    table_ = img::build_permutation_set(cfg_.jigsaw_grid * cfg_.jigsaw_grid, cfg_.perm_count,
                                        cfg_.seed);
    model_.backbone = nn::build_backbone(backbone_config(cfg_, 0, 0), rng);
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.perm_count}, false, rng, cfg_.dtype);
}

StepLosses JigsawSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    std::vector<img::Image> views;
    std::vector<int64_t> targets;
    views.reserve(batch.images.size());
    for (const auto& im : batch.images) {
        int64_t p = rng.uniform_int(0, static_cast<int64_t>(table_.perms.size()) - 1);
        views.push_back(img::jigsaw_shuffle(im, table_.perms[static_cast<size_t>(p)],
                                            cfg_.jigsaw_grid));
        targets.push_back(p);
    }
    auto logits = model_.forward(images_to_tensor(views, cfg_.dtype), true);
    return {{"loss", cross_entropy(logits, targets)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> JigsawSupervisor::graphs() {
    return {{"backbone", &model_.backbone}, {"head", &model_.predictor}};
}

}  // namespace pretext::sup
