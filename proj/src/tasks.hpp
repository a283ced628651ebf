#pragma once

#include "pretext/supervisors.hpp"

namespace pretext::sup {

// shared helpers (tasks_predictive.cpp)
Tensor take_row(const Tensor& mat, int64_t row);            // [B,d] -> detached [d]
Tensor stack_bank_rows(const contrastive::MemoryBank& bank,
                       const std::vector<int64_t>& indices);  // [B,d]
img::Image default_augment(const img::Image& image, int out_size, Rng& rng);
img::AugSpec task_aug_spec(const TaskConfig& cfg, int out_size);
img::Image task_augment(const TaskConfig& cfg, const img::Image& image, int out_size,
                        Rng& rng);
nn::BackboneConfig backbone_config(const TaskConfig& cfg, int in_channels = 0,
                                   int feature_dim = 0);

// --- predictive (patch-based) ---------------------------------------------------

class RotateNetSupervisor : public Supervisor {
public:
    explicit RotateNetSupervisor(TaskConfig config);
    std::string task_name() const override { return "rotatenet"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
};

class ExemplarNetSupervisor : public Supervisor {
public:
    explicit ExemplarNetSupervisor(TaskConfig config);
    std::string task_name() const override { return "exemplarnet"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
};

class JigsawSupervisor : public Supervisor {
public:
    explicit JigsawSupervisor(TaskConfig config);
    std::string task_name() const override { return "jigsaw"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    const img::PermutationTable& permutations() const { return table_; }

private:
    img::PermutationTable table_;
};

// --- predictive (autoencoding) -----------------------------------------------------

class DenoiseSupervisor : public Supervisor {
public:
    explicit DenoiseSupervisor(TaskConfig config);
    std::string task_name() const override { return "denoise"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
};

class ContextSupervisor : public Supervisor {
public:
    explicit ContextSupervisor(TaskConfig config);
    std::string task_name() const override { return "context"; }
    std::string tracked_loss() const override { return "rec"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;

    Tensor discriminator_loss(const Tensor& clean, const Tensor& fake_detached);
    std::pair<Tensor, Tensor> generator_losses(const Tensor& erased, const Tensor& clean,
                                               const Tensor& mask);  // (rec, adv)

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;
    std::map<std::string, double> step(const data::Batch& batch, Rng& rng, int epoch) override;

private:
    struct Erased {
        std::vector<img::Image> images;
        Tensor mask;  // [B,1,H,W]
    };
    Erased erase_batch(const data::Batch& batch, Rng& rng) const;

    nn::ModuleGraph disc_;
    std::array<float, 3> fill_ = {0.5f, 0.5f, 0.5f};
};

class SplitbrainSupervisor : public Supervisor {
public:
    explicit SplitbrainSupervisor(TaskConfig config);
    std::string task_name() const override { return "splitbrain"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;

private:
    nn::ModuleGraph dec_l_;   // L features -> ab planes
    nn::ModuleGraph dec_ab_;  // ab features -> L plane
};

// --- generative -----------------------------------------------------------------------

class BiGanSupervisor : public Supervisor {
public:
    explicit BiGanSupervisor(TaskConfig config);
    std::string task_name() const override { return "bigan"; }
    std::string tracked_loss() const override { return "gen"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;

    Tensor generate(const Tensor& z);                              // [B,3,H,W] in [0,1]
    Tensor discriminate(const Tensor& image, const Tensor& z);     // [B,1] logits
    Tensor encode(const Tensor& image);                            // [B,z]

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;
    std::map<std::string, double> step(const data::Batch& batch, Rng& rng, int epoch) override;

private:
    nn::ModuleGraph gen_;
    nn::ModuleGraph d_conv_;
    nn::ModuleGraph d_mlp_;
};

// --- contrastive -------------------------------------------------------------------------

class IdSupervisor : public Supervisor {
public:
    explicit IdSupervisor(TaskConfig config);
    std::string task_name() const override { return "id"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    const contrastive::MemoryBank& bank() const { return bank_; }

private:
    contrastive::MemoryBank bank_;
};

class CpcSupervisor : public Supervisor {
public:
    explicit CpcSupervisor(TaskConfig config);
    std::string task_name() const override { return "cpc"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    // (context,target)-row-cell prediction pairs per image for grid/offsets
    static int64_t prediction_pairs(int grid, int offsets);

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;
    void validate_dataset(const data::Dataset& dataset) const override;
    int64_t min_batch() const override { return 2; }

private:
    nn::ModuleGraph context_;                 // MLP over mean context embedding
    std::vector<nn::ModuleGraph> pred_heads_; // one per offset k
};

class MocSupervisor : public Supervisor {
public:
    explicit MocSupervisor(TaskConfig config);
    std::string task_name() const override { return "moc"; }
    std::string tracked_loss() const override { return "margin"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    const contrastive::NegativeQueue& queue() const { return queue_; }
    const nn::ModuleGraph& target_backbone() const { return target_backbone_; }

protected:
    void post_update() override;

private:
    nn::ModuleGraph target_backbone_;
    nn::ModuleGraph target_head_;
    contrastive::NegativeQueue queue_;
};

class CmcSupervisor : public Supervisor {
public:
    explicit CmcSupervisor(TaskConfig config);
    std::string task_name() const override { return "cmc"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    const contrastive::MemoryBank& bank_l() const { return bank_l_; }
    const contrastive::MemoryBank& bank_ab() const { return bank_ab_; }

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;

private:
    nn::ModuleGraph f_ab_;
    nn::ModuleGraph h_l_;
    nn::ModuleGraph h_ab_;
    contrastive::MemoryBank bank_l_;
    contrastive::MemoryBank bank_ab_;
};

class ByolSupervisor : public Supervisor {
public:
    explicit ByolSupervisor(TaskConfig config);
    std::string task_name() const override { return "byol"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    nn::ModuleGraph& predictor_head() { return predictor_; }
    const nn::ModuleGraph& target_backbone() const { return target_backbone_; }

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;
    void post_update() override;

private:
    nn::ModuleGraph predictor_;        // online-only head, p
    nn::ModuleGraph target_backbone_;  // EMA of f
    nn::ModuleGraph target_projector_; // EMA of g
};

class PirlSupervisor : public Supervisor {
public:
    explicit PirlSupervisor(TaskConfig config);
    std::string task_name() const override { return "pirl"; }
    StepLosses forward(const data::Batch& batch, Rng& rng, bool update_state) override;
    std::vector<std::pair<std::string, nn::ModuleGraph*>> graphs() override;
    const contrastive::MemoryBank& bank() const { return bank_; }

protected:
    void init_data_optimizer(const data::Dataset& dataset, const TrainConfig& config) override;

private:
    nn::ModuleGraph h_jig_;
    contrastive::MemoryBank bank_;
    img::PermutationTable table_;
};

}  // namespace pretext::sup
