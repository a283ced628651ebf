#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tasks.hpp"

namespace pretext::sup {

namespace {

// Per-query negatives [B, m, d] drawn without replacement from bank rows.
Tensor bank_negatives(const contrastive::MemoryBank& bank,
                      const std::vector<int64_t>& indices, int64_t m, Rng& rng) {
    if (m < 1) return Tensor();
    std::vector<Tensor> rows;
    rows.reserve(indices.size());
    for (int64_t idx : indices)
        rows.push_back(reshape(bank.sample_negatives(idx, m, rng), {1, m, bank.dim()}));
    return concat(rows, 0);
}

Tensor mean_of(const std::vector<Tensor>& losses) {
    Tensor acc = losses.at(0);
    for (size_t i = 1; i < losses.size(); ++i) acc = add(acc, losses[i]);
    return mul_scalar(acc, 1.0 / static_cast<double>(losses.size()));
}

}  // namespace

// --- Instance discrimination (ID) -------------------------------------------------

IdSupervisor::IdSupervisor(TaskConfig config)
    : Supervisor(std::move(config)),
      bank_(std::max<int64_t>(cfg_.dataset_size, 1), cfg_.embed_dim,
            mix_seed(cfg_.seed, 1), cfg_.dtype) {
    if (cfg_.dataset_size < 1)
        throw std::invalid_argument("id task needs dataset_size in its config");
    Rng rng(mix_seed(cfg_.seed, 0x69646973));
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
}

StepLosses IdSupervisor::forward(const data::Batch& batch, Rng& rng, bool update_state) {
    std::vector<img::Image> views;
    views.reserve(batch.images.size());
    for (const auto& im : batch.images)
        views.push_back(task_augment(cfg_, im, cfg_.resolution, rng));
    auto q = l2_normalize(model_.forward(images_to_tensor(views, cfg_.dtype), true), 1);

    int64_t m = std::min<int64_t>(cfg_.n_negatives, bank_.size() - 1);
    auto pos = stack_bank_rows(bank_, batch.indices);
    auto negs = bank_negatives(bank_, batch.indices, m, rng);
    auto loss = contrastive::info_nce_batch(q, pos, negs, cfg_.temperature);

    if (update_state) {
        for (size_t i = 0; i < batch.indices.size(); ++i)
            bank_.update(batch.indices[i], take_row(q, static_cast<int64_t>(i)),
                         cfg_.bank_momentum);
    }
    return {{"loss", loss}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> IdSupervisor::graphs() {
    return {{"backbone", &model_.backbone}, {"head", &model_.predictor}};
}

// --- Contrastive predictive coding (CPC) --------------------------------------------

CpcSupervisor::CpcSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x63706373));
    int cell = cfg_.resolution / cfg_.cpc_grid;
    if (cell < 2) throw std::invalid_argument("cpc grid too fine for the resolution");
    auto bc = backbone_config(cfg_);
    bc.input_size = cell;
    model_.backbone = nn::build_backbone(bc, rng);
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
    context_ = nn::build_mlp_head({cfg_.feature_dim, cfg_.feature_dim, cfg_.feature_dim},
                                  false, rng, cfg_.dtype);
    for (int k = 0; k < cfg_.cpc_offsets; ++k)
        pred_heads_.push_back(
            nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype));
}

void CpcSupervisor::validate_dataset(const data::Dataset& dataset) const {
    Supervisor::validate_dataset(dataset);
    if (dataset.size() < 2)
        throw std::invalid_argument("cpc draws negatives from other images: needs >= 2");
}

void CpcSupervisor::init_data_optimizer(const data::Dataset&, const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    auto params = model_.parameters();
    auto cp = context_.parameters();
    params.insert(params.end(), cp.begin(), cp.end());
    for (auto& head : pred_heads_) {
        auto hp = head.parameters();
        params.insert(params.end(), hp.begin(), hp.end());
    }
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(std::move(params)));
}

int64_t CpcSupervisor::prediction_pairs(int grid, int offsets) {
    int64_t row_pairs = 0;
    for (int r = 0; r + 1 < grid; ++r)
        for (int k = 1; k <= offsets; ++k)
            if (r + k <= grid - 1) ++row_pairs;
    return row_pairs * grid;
}

StepLosses CpcSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    int64_t b = batch.size();
    if (b < 2) throw std::invalid_argument("cpc needs batch size >= 2");
    int grid = cfg_.cpc_grid;
    int cell = cfg_.resolution / grid;
    int64_t cells = static_cast<int64_t>(grid) * grid;

    auto patch_spec = task_aug_spec(cfg_, cell);
    std::vector<img::Image> patches;
    patches.reserve(static_cast<size_t>(b * cells));
    for (const auto& im : batch.images) {
        auto grid_patches = img::extract_patch_grid(im, grid, cell, 0, rng);
        for (auto& p : grid_patches)
            patches.push_back(img::augment_pipeline(patch_spec, p, rng));
    }

    auto z = model_.backbone.forward(images_to_tensor(patches, cfg_.dtype), true);
    auto t = l2_normalize(model_.predictor.forward(z, true), 1);  // target projections
    auto z4 = reshape(z, {b, grid, grid, cfg_.feature_dim});
    auto t4 = reshape(t, {b, grid, grid, cfg_.embed_dim});

    int64_t d = cfg_.embed_dim;
    int64_t m = cfg_.cpc_negatives;
    std::vector<Tensor> losses;
    for (int r_ctx = 0; r_ctx + 1 < grid; ++r_ctx) {
        auto ctx_cells = slice(z4, {{0, b}, {0, r_ctx + 1}, {0, grid}, {0, cfg_.feature_dim}});
        auto ctx = context_.forward(reduce_mean(ctx_cells, {1, 2}, false), true);
        for (int k = 1; k <= cfg_.cpc_offsets; ++k) {
            int row = r_ctx + k;
            if (row > grid - 1) break;
            auto p = l2_normalize(pred_heads_[static_cast<size_t>(k - 1)].forward(ctx, true), 1);
            for (int col = 0; col < grid; ++col) {
                auto pos = reshape(
                    slice(t4, {{0, b}, {row, row + 1}, {col, col + 1}, {0, d}}), {b, d});
                // negatives: target embeddings of patches from other images
                std::vector<Tensor> neg_rows;
                neg_rows.reserve(static_cast<size_t>(b * m));
                for (int64_t bi = 0; bi < b; ++bi) {
                    for (int64_t n = 0; n < m; ++n) {
                        int64_t other = rng.uniform_int(0, b - 2);
                        if (other >= bi) ++other;
                        int64_t cell_idx = rng.uniform_int(0, cells - 1);
                        int64_t flat = other * cells + cell_idx;
                        neg_rows.push_back(slice(t, {{flat, flat + 1}, {0, d}}));
                    }
                }
                auto negs = reshape(concat(neg_rows, 0), {b, m, d});
                losses.push_back(contrastive::info_nce_batch(p, pos, negs, cfg_.temperature));
            }
        }
    }
    return {{"loss", mean_of(losses)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> CpcSupervisor::graphs() {
    std::vector<std::pair<std::string, nn::ModuleGraph*>> out = {
        {"backbone", &model_.backbone},
        {"target_head", &model_.predictor},
        {"context", &context_}};
    for (size_t k = 0; k < pred_heads_.size(); ++k)
        out.emplace_back("pred_" + std::to_string(k), &pred_heads_[k]);
    return out;
}

// --- Momentum contrast (MoC) ---------------------------------------------------------

MocSupervisor::MocSupervisor(TaskConfig config)
    : Supervisor(std::move(config)), queue_(cfg_.queue_capacity) {
    Rng rng(mix_seed(cfg_.seed, 0x6d6f636f));
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
    target_backbone_ = model_.backbone.clone();
    target_head_ = model_.predictor.clone();
    target_backbone_.set_requires_grad(false);
    target_head_.set_requires_grad(false);
}

StepLosses MocSupervisor::forward(const data::Batch& batch, Rng& rng, bool update_state) {
    std::vector<img::Image> v1, v2;
    v1.reserve(batch.images.size());
    v2.reserve(batch.images.size());
    for (const auto& im : batch.images) {
        v1.push_back(task_augment(cfg_, im, cfg_.resolution, rng));
        v2.push_back(task_augment(cfg_, im, cfg_.resolution, rng));
    }
    auto q = l2_normalize(model_.forward(images_to_tensor(v1, cfg_.dtype), true), 1);
    auto k = l2_normalize(
                 target_head_.forward(
                     target_backbone_.forward(images_to_tensor(v2, cfg_.dtype), true), true),
                 1)
                 .detach();

    auto negs = queue_.negatives();
    auto loss = contrastive::info_nce_batch(q, k, negs, cfg_.temperature);

    // matched-baseline margin: the same queries and negatives scored against
    // mismatched positives (batch rolled by one). The queue keeps growing
    // during early steps, which inflates the raw loss floor; the margin
    // isolates how much better the true pairing scores than a wrong one.
    int64_t b = k.dim(0), d = k.dim(1);
    std::vector<Tensor> rolled;
    rolled.reserve(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i)
        rolled.push_back(reshape(take_row(k, (i + 1) % b), {1, d}));
    auto mismatch = contrastive::info_nce_batch(q.detach(), concat(rolled, 0), negs,
                                                cfg_.temperature);
    auto margin = sub(loss.detach(), mismatch);

    if (update_state) queue_.push(k);
    return {{"loss", loss}, {"margin", margin}};
}

void MocSupervisor::post_update() {
    nn::ema_update(target_backbone_, model_.backbone, cfg_.ema_momentum);
    nn::ema_update(target_head_, model_.predictor, cfg_.ema_momentum);
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> MocSupervisor::graphs() {
    return {{"backbone", &model_.backbone},
            {"head", &model_.predictor},
            {"target_backbone", &target_backbone_},
            {"target_head", &target_head_}};
}

// --- Contrastive multiview coding (CMC) -----------------------------------------------

CmcSupervisor::CmcSupervisor(TaskConfig config)
    : Supervisor(std::move(config)),
      bank_l_(std::max<int64_t>(cfg_.dataset_size, 1), cfg_.embed_dim,
              mix_seed(cfg_.seed, 2), cfg_.dtype),
      bank_ab_(std::max<int64_t>(cfg_.dataset_size, 1), cfg_.embed_dim,
               mix_seed(cfg_.seed, 3), cfg_.dtype) {
    if (cfg_.dataset_size < 1)
        throw std::invalid_argument("cmc needs dataset_size in its config");
    Rng rng(mix_seed(cfg_.seed, 0x636d6373));
    model_.backbone = nn::build_backbone(backbone_config(cfg_, 1, 0), rng);  // f_L
    model_.backbone.input_mode = nn::InputMode::lab_l;
    f_ab_ = nn::build_backbone(backbone_config(cfg_, 2, 0), rng);
    h_l_ = nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
    h_ab_ = nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
}

void CmcSupervisor::init_data_optimizer(const data::Dataset&, const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    auto params = model_.backbone.parameters();
    for (auto* g : {&f_ab_, &h_l_, &h_ab_}) {
        auto p = g->parameters();
        params.insert(params.end(), p.begin(), p.end());
    }
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(std::move(params)));
}

StepLosses CmcSupervisor::forward(const data::Batch& batch, Rng& rng, bool update_state) {
    std::vector<img::Image> views;
    views.reserve(batch.images.size());
    for (const auto& im : batch.images)
        views.push_back(task_augment(cfg_, im, cfg_.resolution, rng));
    auto [l_planes, ab_planes] = lab_batch(views, cfg_.dtype);

    auto q_l = l2_normalize(h_l_.forward(model_.backbone.forward(l_planes, true), true), 1);
    auto q_ab = l2_normalize(h_ab_.forward(f_ab_.forward(ab_planes, true), true), 1);

    int64_t m = std::min<int64_t>(cfg_.n_negatives, bank_l_.size() - 1);
    auto loss_l = contrastive::info_nce_batch(q_l, stack_bank_rows(bank_ab_, batch.indices),
                                              bank_negatives(bank_ab_, batch.indices, m, rng),
                                              cfg_.temperature);
    auto loss_ab = contrastive::info_nce_batch(q_ab, stack_bank_rows(bank_l_, batch.indices),
                                               bank_negatives(bank_l_, batch.indices, m, rng),
                                               cfg_.temperature);
    if (update_state) {
        for (size_t i = 0; i < batch.indices.size(); ++i) {
            bank_l_.update(batch.indices[i], take_row(q_l, static_cast<int64_t>(i)),
                           cfg_.bank_momentum);
            bank_ab_.update(batch.indices[i], take_row(q_ab, static_cast<int64_t>(i)),
                            cfg_.bank_momentum);
        }
    }
    return {{"l_view", loss_l}, {"ab_view", loss_ab}, {"loss", add(loss_l, loss_ab)}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> CmcSupervisor::graphs() {
    return {{"backbone_l", &model_.backbone},
            {"backbone_ab", &f_ab_},
            {"head_l", &h_l_},
            {"head_ab", &h_ab_}};
}

// --- BYOL ------------------------------------------------------------------------------

ByolSupervisor::ByolSupervisor(TaskConfig config) : Supervisor(std::move(config)) {
    Rng rng(mix_seed(cfg_.seed, 0x62796f6c));
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);  // f
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);  // g
    predictor_ = nn::build_mlp_head({cfg_.embed_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
    target_backbone_ = model_.backbone.clone();
    target_projector_ = model_.predictor.clone();
    target_backbone_.set_requires_grad(false);
    target_projector_.set_requires_grad(false);
}

void ByolSupervisor::init_data_optimizer(const data::Dataset&, const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    auto params = model_.parameters();
    auto pp = predictor_.parameters();
    params.insert(params.end(), pp.begin(), pp.end());
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(std::move(params)));
}

StepLosses ByolSupervisor::forward(const data::Batch& batch, Rng& rng, bool) {
    std::vector<img::Image> v1, v2;
    v1.reserve(batch.images.size());
    v2.reserve(batch.images.size());
    for (const auto& im : batch.images) {
        v1.push_back(task_augment(cfg_, im, cfg_.resolution, rng));
        v2.push_back(task_augment(cfg_, im, cfg_.resolution, rng));
    }
    auto x1 = images_to_tensor(v1, cfg_.dtype);
    auto x2 = images_to_tensor(v2, cfg_.dtype);

    auto online = [&](const Tensor& x) {
        return predictor_.forward(model_.predictor.forward(model_.backbone.forward(x, true), true),
                                  true);
    };
    auto target = [&](const Tensor& x) {
        return target_projector_
            .forward(target_backbone_.forward(x, true), true)
            .detach();  // stop-gradient
    };
    auto loss = add(contrastive::byol_loss(online(x1), target(x2)),
                    contrastive::byol_loss(online(x2), target(x1)));
    return {{"loss", loss}};
}

void ByolSupervisor::post_update() {
    nn::ema_update(target_backbone_, model_.backbone, cfg_.ema_momentum);
    nn::ema_update(target_projector_, model_.predictor, cfg_.ema_momentum);
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> ByolSupervisor::graphs() {
    return {{"backbone", &model_.backbone},
            {"projector", &model_.predictor},
            {"predictor", &predictor_},
            {"target_backbone", &target_backbone_},
            {"target_projector", &target_projector_}};
}

// --- PIRL ------------------------------------------------------------------------------

PirlSupervisor::PirlSupervisor(TaskConfig config)
    : Supervisor(std::move(config)),
      bank_(std::max<int64_t>(cfg_.dataset_size, 1), cfg_.embed_dim,
            mix_seed(cfg_.seed, 4), cfg_.dtype) {
    if (cfg_.dataset_size < 1)
        throw std::invalid_argument("pirl needs dataset_size in its config");
    Rng rng(mix_seed(cfg_.seed, 0x7069726c));
    table_ = img::build_permutation_set(cfg_.jigsaw_grid * cfg_.jigsaw_grid, cfg_.perm_count,
                                        cfg_.seed);
    model_.backbone = nn::build_backbone(backbone_config(cfg_), rng);
    model_.predictor =
        nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);  // h_orig
    h_jig_ = nn::build_mlp_head({cfg_.feature_dim, cfg_.embed_dim}, false, rng, cfg_.dtype);
}

void PirlSupervisor::init_data_optimizer(const data::Dataset&, const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    auto params = model_.parameters();
    auto hj = h_jig_.parameters();
    params.insert(params.end(), hj.begin(), hj.end());
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(std::move(params)));
}

StepLosses PirlSupervisor::forward(const data::Batch& batch, Rng& rng, bool update_state) {
    int grid = cfg_.jigsaw_grid;
    int cell = cfg_.resolution / grid;
    auto patch_spec = task_aug_spec(cfg_, cell);

    std::vector<img::Image> jig_views;
    jig_views.reserve(batch.images.size());
    for (const auto& im : batch.images) {
        auto patches = img::extract_patch_grid(im, grid, cell, 0, rng);
        img::Image assembled = img::make_image(grid * cell, grid * cell, im.channels);
        for (int r = 0; r < grid; ++r)
            for (int c = 0; c < grid; ++c) {
                auto aug = img::augment_pipeline(
                    patch_spec, patches[static_cast<size_t>(r * grid + c)], rng);
                for (int y = 0; y < cell; ++y)
                    for (int x = 0; x < cell; ++x)
                        for (int ch = 0; ch < im.channels; ++ch)
                            assembled.at(r * cell + y, c * cell + x, ch) = aug.at(y, x, ch);
            }
        int64_t p = rng.uniform_int(0, static_cast<int64_t>(table_.perms.size()) - 1);
        jig_views.push_back(
            img::jigsaw_shuffle(assembled, table_.perms[static_cast<size_t>(p)], grid));
    }

    auto feat_jig = model_.backbone.forward(images_to_tensor(jig_views, cfg_.dtype), true);
    auto feat_orig =
        model_.backbone.forward(images_to_tensor(batch.images, cfg_.dtype), true);
    auto q_jig = l2_normalize(h_jig_.forward(feat_jig, true), 1);
    auto q_orig = l2_normalize(model_.predictor.forward(feat_orig, true), 1);

    int64_t m = std::min<int64_t>(cfg_.n_negatives, bank_.size() - 1);
    auto pos = stack_bank_rows(bank_, batch.indices);
    auto negs = bank_negatives(bank_, batch.indices, m, rng);
    auto loss_jig = contrastive::info_nce_batch(q_jig, pos, negs, cfg_.temperature);
    auto loss_orig = contrastive::info_nce_batch(q_orig, pos, negs, cfg_.temperature);
    auto total = add(mul_scalar(loss_jig, cfg_.pirl_lambda),
                     mul_scalar(loss_orig, 1.0 - cfg_.pirl_lambda));

    if (update_state) {
        for (size_t i = 0; i < batch.indices.size(); ++i)
            bank_.update(batch.indices[i], take_row(q_orig, static_cast<int64_t>(i)),
                         cfg_.bank_momentum);
    }
    return {{"jig", loss_jig}, {"orig", loss_orig}, {"loss", total}};
}

std::vector<std::pair<std::string, nn::ModuleGraph*>> PirlSupervisor::graphs() {
    return {{"backbone", &model_.backbone},
            {"head_orig", &model_.predictor},
            {"head_jig", &h_jig_}};
}

// --- factory -----------------------------------------------------------------------------

const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names = {
        "rotatenet", "exemplarnet", "jigsaw", "denoise", "context", "splitbrain",
        "bigan",     "id",          "cpc",    "moc",     "cmc",     "byol",
        "pirl"};
    return names;
}

bool is_valid_task(const std::string& task) {
    const auto& names = task_names();
    return std::find(names.begin(), names.end(), task) != names.end();
}

TaskConfig default_task_config(const std::string& task) {
    TaskConfig cfg;
    if (task == "moc" || task == "pirl") cfg.temperature = 0.07;
    if (task == "moc") cfg.ema_momentum = 0.999;
    if (task == "byol") cfg.ema_momentum = 0.996;
    // two-timescale rule: the joint discriminator otherwise outpaces G/E at
    // desk batch sizes
    if (task == "bigan") cfg.d_lr_scale = 0.02;
    return cfg;
}

std::unique_ptr<Supervisor> make_supervisor(const std::string& task, const TaskConfig& cfg) {
    if (task == "rotatenet") return std::make_unique<RotateNetSupervisor>(cfg);
    if (task == "exemplarnet") return std::make_unique<ExemplarNetSupervisor>(cfg);
    if (task == "jigsaw") return std::make_unique<JigsawSupervisor>(cfg);
    if (task == "denoise") return std::make_unique<DenoiseSupervisor>(cfg);
    if (task == "context") return std::make_unique<ContextSupervisor>(cfg);
    if (task == "splitbrain") return std::make_unique<SplitbrainSupervisor>(cfg);
    if (task == "bigan") return std::make_unique<BiGanSupervisor>(cfg);
    if (task == "id") return std::make_unique<IdSupervisor>(cfg);
    if (task == "cpc") return std::make_unique<CpcSupervisor>(cfg);
    if (task == "moc") return std::make_unique<MocSupervisor>(cfg);
    if (task == "cmc") return std::make_unique<CmcSupervisor>(cfg);
    if (task == "byol") return std::make_unique<ByolSupervisor>(cfg);
    if (task == "pirl") return std::make_unique<PirlSupervisor>(cfg);
    std::string msg = "unknown task '" + task + "'; valid tasks:";
    for (const auto& name : task_names()) msg += " " + name;
    throw std::invalid_argument(msg);
}

}  // namespace pretext::sup
