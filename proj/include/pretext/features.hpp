#pragma once

#include <string>
#include <vector>

#include "pretext/data.hpp"
#include "pretext/nn.hpp"

namespace pretext::features {

// Frozen forward pass over the dataset in index order, eval mode. The graph's
// input_mode selects the preprocessing (rgb, Lab-rescaled planes, or L only).
Tensor extract_features(nn::ModuleGraph& backbone, const data::Dataset& dataset,
                        DType dtype = DType::f32, int64_t batch_size = 64);

// Feature file: magic "SSFX", u32 N, u32 d, then N*d little-endian f32 rows.
void save_features(const std::string& path, const Tensor& features);
Tensor load_features(const std::string& path);

struct ProbeConfig {
    int epochs = 200;
    double lr = 1e-2;
    double train_fraction = 0.8;
    uint64_t seed = 0;
};

struct ProbeResult {
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    int classes = 0;
    int64_t train_count = 0;
    int64_t val_count = 0;
};

// Multinomial logistic regression on frozen features, trained full-batch with
// the framework's own adam on a seeded 80/20 split.
ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeConfig& config);

}  // namespace pretext::features
