#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "pretext/contrastive.hpp"
#include "pretext/data.hpp"
#include "pretext/image.hpp"
#include "pretext/nn.hpp"

namespace pretext::sup {

enum class OptimizerKind { adam, sgd };

// batch/view helpers shared by the tasks and the feature extractor
Tensor images_to_tensor(const std::vector<img::Image>& images, DType dtype);
std::pair<Tensor, Tensor> lab_batch(const std::vector<img::Image>& images, DType dtype);

struct TrainConfig {
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    int epochs = 10;
    int batch_size = 32;
    bool shuffle = true;
    int num_workers = 0;
    std::string name = "store/base";
    bool pretrained = false;
    int lr_step_size = 100;
    double lr_gamma = 1.0;

    // host hooks
    std::shared_ptr<std::atomic<bool>> cancel;  // checked between batches
    std::function<void(int epoch, int step, const std::map<std::string, double>&)> on_step;
};

struct TrainReport {
    std::vector<std::map<std::string, double>> epoch_losses;  // mean per component
    std::vector<std::map<std::string, double>> step_losses;
    double wall_seconds = 0.0;
    int epochs_completed = 0;
    bool interrupted = false;

    nlohmann::json to_json() const;
};

// One knob struct shared by all tasks; factories pin the per-task defaults.
struct TaskConfig {
    int resolution = 32;
    int in_channels = 3;
    std::vector<int> widths = {16, 32, 64};
    int feature_dim = 64;
    nn::NormKind norm = nn::NormKind::layer;
    DType dtype = DType::f32;
    uint64_t seed = 0;

    double temperature = 0.1;
    double ema_momentum = 0.999;
    double bank_momentum = 0.5;
    int embed_dim = 64;
    int n_negatives = 128;
    int queue_capacity = 1024;

    int jigsaw_grid = 3;
    int perm_count = 24;
    int cpc_grid = 4;
    int cpc_offsets = 2;
    int cpc_negatives = 16;
    double noise_sigma = 0.1;
    double lambda_adv = 0.001;
    double pirl_lambda = 0.5;
    int z_dim = 64;
    int exemplar_cap = 10000;
    bool exemplar_patches = false;  // classes from half-size patches instead of whole images

    // the default augmentation suite, one swappable block
    double aug_crop_lo = 0.3, aug_crop_hi = 1.0;
    double aug_jitter = 0.4;
    double aug_flip_p = 0.5, aug_gray_p = 0.25;
    double d_lr_scale = 1.0;  // discriminator lr multiplier (adversarial tasks)
    int64_t dataset_size = 0;

    nlohmann::json to_json() const;
    static TaskConfig from_json(const nlohmann::json& j);
};

using StepLosses = std::vector<std::pair<std::string, Tensor>>;

// One pretext task: networks, task state and the 5-phase lifecycle
// (load_pretrained, init_data_optimizer, run_epochs, forward, update). Every
// phase is virtual so hosts can replace behaviour piecemeal.
class Supervisor {
public:
    explicit Supervisor(TaskConfig config);
    virtual ~Supervisor() = default;

    TrainReport supervise(const data::Dataset& dataset, const TrainConfig& config);

    virtual std::string task_name() const = 0;
    virtual const nn::ModuleGraph& get_backbone() const { return model_.backbone; }
    nn::CombinedNet& model() { return model_; }
    const TaskConfig& config() const { return cfg_; }

    // Named loss components; the entry "loss" is the trainable total.
    // update_state=false leaves banks/queues/momentum targets untouched.
    virtual StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) = 0;

    // Which reported component the smoke criteria track (adversarial tasks
    // track the generator/reconstruction side).
    virtual std::string tracked_loss() const { return "loss"; }

    void save(const std::string& path, int epoch = -1);
    void load(const std::string& path);

    virtual std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() = 0;

protected:
    // --- lifecycle phases ---
    virtual void load_pretrained(const std::string& name, bool pretrained);
    virtual void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config);
    virtual TrainReport run_epochs(const data::Dataset& dataset, const TrainConfig& config);
    virtual std::map<std::string, double> step(const data::Batch& batch, Rng& rng, int epoch);
    virtual void update(const Tensor& loss, nn::Optimizer& optimizer, double lr);
    virtual void post_update();

    virtual void validate_dataset(const data::Dataset& dataset) const;
    virtual int64_t min_batch() const { return 1; }  // loader skips smaller batches

    nn::Optimizer make_optimizer(std::vector<Tensor> params) const;

    TaskConfig cfg_;
    nn::CombinedNet model_;
    std::vector<nn::Optimizer> optimizers_;
    nn::LRSchedule schedule_;
    OptimizerKind opt_kind_ = OptimizerKind::adam;
};

const std::vector<std::string>& task_names();
bool is_valid_task(const std::string& task);

// Per-task defaults (temperature, momenta, ...) on top of the shared struct.
TaskConfig default_task_config(const std::string& task);

// dataset may be null for tasks that do not size anything from it; bank-based
// tasks read config.dataset_size (set it from the dataset or metadata first).
std::unique_ptr<Supervisor> make_supervisor(const std::string& task, const TaskConfig& config);

// Rebuilds the supervisor from checkpoint metadata and loads its parameters.
std::unique_ptr<Supervisor> load_supervisor(const std::string& task, const std::string& name);

// Convenience: sizes the config from the dataset and constructs.
std::unique_ptr<Supervisor> make_supervisor_for(const std::string& task,
                                                const data::Dataset& dataset,
                                                TaskConfig config);

}  // namespace pretext::sup
