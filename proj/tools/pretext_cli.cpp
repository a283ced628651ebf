#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"
#include "pretext/features.hpp"
#include "pretext/supervisors.hpp"

using namespace pretext;

namespace {

std::shared_ptr<std::atomic<bool>> g_cancel;

void handle_sigint(int) {
    if (g_cancel) g_cancel->store(true);
}

struct CommonArgs {
    std::string task;
    std::string data_dir;
    int synth_n = 0;
    int size = 32;
    uint64_t seed = 0;
    std::string config_file;
};

data::Dataset build_dataset(const CommonArgs& args) {
    if (!args.data_dir.empty()) return data::dataset_from_dir(args.data_dir, args.size);
    if (args.synth_n > 0) {
        data::SyntheticSpec spec;
        spec.n_per_class = args.synth_n;
        spec.size = args.size;
        spec.seed = args.seed;
        return data::synth_dataset(spec);
    }
    throw std::runtime_error("no dataset: pass --data DIR or --synth N");
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--data", args.data_dir, "directory of .ppm files (with optional labels.tsv)");
    cmd->add_option("--synth", args.synth_n, "synthetic dataset with N images per class");
    cmd->add_option("--size", args.size, "image resolution")->capture_default_str();
    cmd->add_option("--seed", args.seed, "master seed")->capture_default_str();
    cmd->add_option("--config", args.config_file, "JSON config file (flags win)");
}

nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    return nlohmann::json::parse(f);
}

// config-file value applies only when the flag was not given on the command line
template <typename T>
void fill_from_config(const CLI::App* cmd, const std::string& flag, const nlohmann::json& j,
                      const std::string& key, T& value) {
    if (cmd->count(flag) == 0 && j.contains(key)) value = j.at(key).get<T>();
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

int run_train(const CLI::App* cmd, CommonArgs& common, sup::TrainConfig& train,
              std::string optimizer_name) {
    auto file_cfg = load_config_file(common.config_file);
    fill_from_config(cmd, "--task", file_cfg, "task", common.task);
    fill_from_config(cmd, "--data", file_cfg, "data", common.data_dir);
    fill_from_config(cmd, "--synth", file_cfg, "synth", common.synth_n);
    fill_from_config(cmd, "--size", file_cfg, "size", common.size);
    fill_from_config(cmd, "--seed", file_cfg, "seed", common.seed);
    fill_from_config(cmd, "--epochs", file_cfg, "epochs", train.epochs);
    fill_from_config(cmd, "--batch-size", file_cfg, "batch_size", train.batch_size);
    fill_from_config(cmd, "--lr", file_cfg, "lr", train.lr);
    fill_from_config(cmd, "--num-workers", file_cfg, "num_workers", train.num_workers);
    fill_from_config(cmd, "--name", file_cfg, "name", train.name);
    fill_from_config(cmd, "--optimizer", file_cfg, "optimizer", optimizer_name);
    if (cmd->count("--pretrained") == 0 && file_cfg.contains("pretrained"))
        train.pretrained = file_cfg.at("pretrained").get<bool>();
    if (file_cfg.contains("shuffle")) train.shuffle = file_cfg.at("shuffle").get<bool>();

    if (!sup::is_valid_task(common.task)) {
        std::cerr << "unknown task '" << common.task << "'; valid tasks:";
        for (const auto& name : sup::task_names()) std::cerr << " " << name;
        std::cerr << "\n";
        return 2;
    }
    train.optimizer = optimizer_name == "sgd" ? sup::OptimizerKind::sgd
                                              : sup::OptimizerKind::adam;

    auto dataset = build_dataset(common);
    auto task_cfg = sup::default_task_config(common.task);
    // task-level keys in the config file override the defaults
    auto merged = task_cfg.to_json();
    for (auto& [key, value] : file_cfg.items()) merged[key] = value;
    task_cfg = sup::TaskConfig::from_json(merged);
    task_cfg.seed = common.seed;

    auto supervisor = sup::make_supervisor_for(common.task, dataset, task_cfg);

    g_cancel = std::make_shared<std::atomic<bool>>(false);
    train.cancel = g_cancel;
    std::signal(SIGINT, handle_sigint);
    train.on_step = [](int epoch, int step, const std::map<std::string, double>& losses) {
        if (step == 0) {
            std::cout << "epoch " << epoch;
            for (const auto& [name, v] : losses) std::cout << "  " << name << "=" << v;
            std::cout << "\n";
        }
    };

    auto report = supervisor->supervise(dataset, train);
    std::signal(SIGINT, SIG_DFL);

    nlohmann::json out = report.to_json();
    out["task"] = common.task;
    out["config"] = task_cfg.to_json();
    out["config"]["lr"] = train.lr;
    out["config"]["epochs"] = train.epochs;
    out["config"]["batch_size"] = train.batch_size;
    out["config"]["optimizer"] = optimizer_name;
    out["checkpoint"] = train.name;
    write_json(train.name + ".report.json", out);

    std::cout << "checkpoint: " << train.name << "\n"
              << "report: " << train.name << ".report.json\n";
    if (report.interrupted) std::cout << "interrupted: checkpoint saved\n";
    return 0;
}

int run_extract(CommonArgs& common, const std::string& checkpoint, const std::string& out) {
    auto metadata = nn::read_checkpoint_metadata(checkpoint);
    std::string task = metadata.value("task", "");
    if (!sup::is_valid_task(task))
        throw std::runtime_error("checkpoint does not name a valid task");
    auto supervisor = sup::load_supervisor(task, checkpoint);
    common.size = supervisor->config().resolution;
    auto dataset = build_dataset(common);
    auto backbone = supervisor->get_backbone();  // shares parameters
    auto feats = features::extract_features(backbone, dataset);
    features::save_features(out, feats);
    std::cout << "features: " << out << " (" << feats.dim(0) << " x " << feats.dim(1)
              << ")\n";
    return 0;
}

int run_probe(CommonArgs& common, const std::string& feature_file,
              const std::string& checkpoint, const std::string& out, int probe_epochs,
              double probe_lr) {
    Tensor feats;
    data::Dataset dataset;
    if (!feature_file.empty()) {
        feats = features::load_features(feature_file);
        dataset = build_dataset(common);
    } else if (!checkpoint.empty()) {
        auto metadata = nn::read_checkpoint_metadata(checkpoint);
        auto supervisor = sup::load_supervisor(metadata.value("task", ""), checkpoint);
        common.size = supervisor->config().resolution;
        dataset = build_dataset(common);
        auto backbone = supervisor->get_backbone();
        feats = features::extract_features(backbone, dataset);
    } else {
        throw std::runtime_error("probe needs --features FILE or --checkpoint PATH");
    }
    if (!dataset.has_labels())
        throw std::runtime_error("probe needs labels for every item");
    if (feats.dim(0) != dataset.size())
        throw std::runtime_error("feature count does not match dataset size");

    features::ProbeConfig cfg;
    cfg.epochs = probe_epochs;
    cfg.lr = probe_lr;
    cfg.seed = common.seed;
    auto result = features::linear_probe(feats, dataset.labels, cfg);

    nlohmann::json j = {{"train_accuracy", result.train_accuracy},
                        {"val_accuracy", result.val_accuracy},
                        {"classes", result.classes},
                        {"train_count", result.train_count},
                        {"val_count", result.val_count}};
    std::cout << "train accuracy: " << result.train_accuracy << "\n"
              << "val accuracy: " << result.val_accuracy << "\n";
    if (!out.empty()) {
        write_json(out, j);
        std::cout << "report: " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale self-supervised pretext-task training"};
    app.require_subcommand(1);

    CommonArgs common;
    sup::TrainConfig train_cfg;
    std::string optimizer_name = "adam";
    std::string checkpoint, feature_file, out_file;
    int probe_epochs = 200;
    double probe_lr = 1e-2;

    auto* train = app.add_subcommand("train", "train a pretext supervisor");
    add_common(train, common);
    train->add_option("--task", common.task, "pretext task name");
    train->add_option("--epochs", train_cfg.epochs)->capture_default_str();
    train->add_option("--batch-size", train_cfg.batch_size)->capture_default_str();
    train->add_option("--lr", train_cfg.lr)->capture_default_str();
    train->add_option("--optimizer", optimizer_name, "adam or sgd")->capture_default_str();
    train->add_option("--num-workers", train_cfg.num_workers)->capture_default_str();
    train->add_option("--name", train_cfg.name, "checkpoint path")->capture_default_str();
    train->add_flag("--pretrained", train_cfg.pretrained, "load checkpoint before training");

    auto* extract = app.add_subcommand("extract", "write frozen backbone features");
    add_common(extract, common);
    extract->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    extract->add_option("--out", out_file, "feature file path")->required();

    auto* probe = app.add_subcommand("probe", "linear probe on frozen features");
    add_common(probe, common);
    probe->add_option("--features", feature_file, "feature file from extract");
    probe->add_option("--checkpoint", checkpoint, "extract features from this checkpoint");
    probe->add_option("--out", out_file, "JSON report path");
    probe->add_option("--probe-epochs", probe_epochs)->capture_default_str();
    probe->add_option("--probe-lr", probe_lr)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return run_train(train, common, train_cfg, optimizer_name);
        if (extract->parsed()) return run_extract(common, checkpoint, out_file);
        if (probe->parsed())
            return run_probe(common, feature_file, checkpoint, out_file, probe_epochs,
                             probe_lr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
