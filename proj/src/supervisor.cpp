#include "pretext/supervisors.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace pretext::sup {

nlohmann::json TrainReport::to_json() const {
    nlohmann::json j;
    j["epoch_losses"] = epoch_losses;
    j["step_losses"] = step_losses;
    j["wall_seconds"] = wall_seconds;
    j["epochs_completed"] = epochs_completed;
    j["interrupted"] = interrupted;
    return j;
}

nlohmann::json TaskConfig::to_json() const {
    return nlohmann::json{
        {"resolution", resolution},
        {"in_channels", in_channels},
        {"widths", widths},
        {"feature_dim", feature_dim},
        {"norm", norm == nn::NormKind::batch ? "batch" : "layer"},
        {"dtype", dtype == DType::f64 ? "f64" : "f32"},
        {"seed", seed},
        {"temperature", temperature},
        {"ema_momentum", ema_momentum},
        {"bank_momentum", bank_momentum},
        {"embed_dim", embed_dim},
        {"n_negatives", n_negatives},
        {"queue_capacity", queue_capacity},
        {"jigsaw_grid", jigsaw_grid},
        {"perm_count", perm_count},
        {"cpc_grid", cpc_grid},
        {"cpc_offsets", cpc_offsets},
        {"cpc_negatives", cpc_negatives},
        {"noise_sigma", noise_sigma},
        {"lambda_adv", lambda_adv},
        {"pirl_lambda", pirl_lambda},
        {"z_dim", z_dim},
        {"exemplar_cap", exemplar_cap},
        {"exemplar_patches", exemplar_patches},
        {"aug_crop_lo", aug_crop_lo},
        {"aug_crop_hi", aug_crop_hi},
        {"aug_jitter", aug_jitter},
        {"aug_flip_p", aug_flip_p},
        {"aug_gray_p", aug_gray_p},
        {"d_lr_scale", d_lr_scale},
        {"dataset_size", dataset_size},
    };
}

TaskConfig TaskConfig::from_json(const nlohmann::json& j) {
    TaskConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.widths = j.value("widths", c.widths);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.norm = j.value("norm", "layer") == std::string("batch") ? nn::NormKind::batch
                                                              : nn::NormKind::layer;
    c.dtype = j.value("dtype", "f32") == std::string("f64") ? DType::f64 : DType::f32;
    c.seed = j.value("seed", c.seed);
    c.temperature = j.value("temperature", c.temperature);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    c.bank_momentum = j.value("bank_momentum", c.bank_momentum);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.n_negatives = j.value("n_negatives", c.n_negatives);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.jigsaw_grid = j.value("jigsaw_grid", c.jigsaw_grid);
    c.perm_count = j.value("perm_count", c.perm_count);
    c.cpc_grid = j.value("cpc_grid", c.cpc_grid);
    c.cpc_offsets = j.value("cpc_offsets", c.cpc_offsets);
    c.cpc_negatives = j.value("cpc_negatives", c.cpc_negatives);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
    c.pirl_lambda = j.value("pirl_lambda", c.pirl_lambda);
    c.z_dim = j.value("z_dim", c.z_dim);
    c.exemplar_cap = j.value("exemplar_cap", c.exemplar_cap);
    c.exemplar_patches = j.value("exemplar_patches", c.exemplar_patches);
    c.aug_crop_lo = j.value("aug_crop_lo", c.aug_crop_lo);
    c.aug_crop_hi = j.value("aug_crop_hi", c.aug_crop_hi);
    c.aug_jitter = j.value("aug_jitter", c.aug_jitter);
    c.aug_flip_p = j.value("aug_flip_p", c.aug_flip_p);
    c.aug_gray_p = j.value("aug_gray_p", c.aug_gray_p);
    c.d_lr_scale = j.value("d_lr_scale", c.d_lr_scale);
    c.dataset_size = j.value("dataset_size", c.dataset_size);
    return c;
}

Supervisor::Supervisor(TaskConfig config) : cfg_(std::move(config)) {}

nn::Optimizer Supervisor::make_optimizer(std::vector<Tensor> params) const {
    if (opt_kind_ == OptimizerKind::sgd) return nn::Optimizer::sgd(std::move(params));
    return nn::Optimizer::adam(std::move(params));
}

void Supervisor::validate_dataset(const data::Dataset& dataset) const {
    if (dataset.size() == 0) throw std::invalid_argument("empty dataset");
    if (cfg_.dataset_size > 0 && dataset.size() != cfg_.dataset_size)
        throw std::invalid_argument("dataset size does not match the configured task state");
}

void Supervisor::load_pretrained(const std::string& name, bool pretrained) {
    if (!pretrained) return;
    load(name);
}

void Supervisor::init_data_optimizer(const data::Dataset&, const TrainConfig& config) {
    opt_kind_ = config.optimizer;
    schedule_ = nn::LRSchedule{config.lr, config.lr_step_size, config.lr_gamma};
    optimizers_.clear();
    optimizers_.push_back(make_optimizer(model_.parameters()));
}

void Supervisor::update(const Tensor& loss, nn::Optimizer& optimizer, double lr) {
    optimizer.zero_grad();
    backward(loss);
    optimizer.step(lr);
}

void Supervisor::post_update() {}

std::map<std::string, double> Supervisor::step(const data::Batch& batch, Rng& rng,
                                               int epoch) {
    Tape tape;
    TapeScope scope(tape);
    auto losses = forward(batch, rng, true);
    std::map<std::string, double> values;
    Tensor total;
    for (auto& [name, t] : losses) {
        values[name] = t.item();
        if (name == "loss") total = t;
    }
    if (!total.defined()) throw std::runtime_error("forward returned no 'loss' component");
    update(total, optimizers_.at(0), schedule_.at(epoch));
    post_update();
    return values;
}

TrainReport Supervisor::run_epochs(const data::Dataset& dataset, const TrainConfig& config) {
    TrainReport report;
    auto t0 = std::chrono::steady_clock::now();
    bool cancelled = false;
    for (int epoch = 0; epoch < config.epochs && !cancelled; ++epoch) {
        data::BatchLoader loader(dataset, config.batch_size, config.shuffle, cfg_.seed,
                                 epoch, config.num_workers);
        std::map<std::string, double> sums;
        int64_t counted = 0;
        data::Batch batch;
        int step_idx = 0;
        while (loader.next(batch)) {
            if (batch.size() < min_batch()) {
                std::cerr << "[" << task_name() << "] skipping batch of size "
                          << batch.size() << " (needs >= " << min_batch() << ")\n";
                ++step_idx;
                continue;
            }
            Rng rng(mix_seed(cfg_.seed, (static_cast<uint64_t>(epoch) << 20) ^
                                            static_cast<uint64_t>(step_idx)));
            auto values = step(batch, rng, epoch);
            for (const auto& [name, v] : values) {
                if (!std::isfinite(v))
                    throw std::runtime_error(task_name() + ": non-finite loss " + name);
                sums[name] += v;
            }
            ++counted;
            report.step_losses.push_back(values);
            if (config.on_step) config.on_step(epoch, step_idx, values);
            ++step_idx;
            if (config.cancel && config.cancel->load()) {
                cancelled = true;
                break;
            }
        }
        if (!cancelled && counted > 0) {
            std::map<std::string, double> means;
            for (const auto& [name, v] : sums) means[name] = v / static_cast<double>(counted);
            report.epoch_losses.push_back(means);
        }
        if (!cancelled) ++report.epochs_completed;
    }
    report.interrupted = cancelled;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

TrainReport Supervisor::supervise(const data::Dataset& dataset, const TrainConfig& config) {
    validate_dataset(dataset);
    load_pretrained(config.name, config.pretrained);
    init_data_optimizer(dataset, config);
    TrainReport report = run_epochs(dataset, config);
    save(config.name, report.epochs_completed);  // also on interrupt
    return report;
}

void Supervisor::save(const std::string& path, int epoch) {
    nlohmann::json metadata;
    metadata["task"] = task_name();
    metadata["config"] = cfg_.to_json();
    if (epoch >= 0) metadata["epoch"] = epoch;
    std::vector<std::pair<std::string, const nn::ModuleGraph*>> out;
    for (auto& [name, graph] : graphs()) out.emplace_back(name, graph);
    nn::save_checkpoint(path, out, metadata);
}

void Supervisor::load(const std::string& path) {
    auto metadata = nn::read_checkpoint_metadata(path);
    if (metadata.value("task", "") != task_name())
        throw std::runtime_error("checkpoint task '" + metadata.value("task", std::string()) +
                                 "' does not match supervisor '" + task_name() + "'");
    nn::load_checkpoint(path, graphs());
}

std::unique_ptr<Supervisor> make_supervisor_for(const std::string& task,
                                                const data::Dataset& dataset,
                                                TaskConfig config) {
    config.resolution = dataset.resolution;
    config.dataset_size = dataset.size();
    return make_supervisor(task, config);
}

std::unique_ptr<Supervisor> load_supervisor(const std::string& task, const std::string& name) {
    auto metadata = nn::read_checkpoint_metadata(name);
    if (metadata.value("task", "") != task)
        throw std::runtime_error("checkpoint task '" + metadata.value("task", std::string()) +
                                 "' does not match requested task '" + task + "'");
    auto cfg = TaskConfig::from_json(metadata.at("config"));
    auto sup = make_supervisor(task, cfg);
    nn::load_checkpoint(name, sup->graphs());
    return sup;
}

}  // namespace pretext::sup
