#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "pretext/image.hpp"
#include "pretext/rng.hpp"
#include "pretext/tensor.hpp"

namespace pretext::data {

// Immutable after construction; stable indices 0..N-1 key the memory banks.
struct Dataset {
    std::vector<img::Image> images;
    std::vector<int> labels;  // -1 where unlabeled
    int resolution = 32;
    int channels = 3;

    int64_t size() const { return static_cast<int64_t>(images.size()); }
    bool has_labels() const;
    int num_classes() const;
    std::array<float, 3> channel_mean() const;
};

// Directory of .ppm files, sorted by filename; optional labels.tsv with
// "filename<TAB>integer" lines.
Dataset dataset_from_dir(const std::string& path, int resolution);

struct SyntheticSpec {
    int n_per_class = 32;
    int size = 32;
    uint64_t seed = 0;
    // shape center offset from image center, drawn uniform per axis; the
    // default range is strictly negative so every rotate90 class is
    // identifiable from the shape position
    double offset_lo = -7.0 / 32.0, offset_hi = -3.0 / 32.0;  // fraction of size
    double disk_radius_lo = 0.20, disk_radius_hi = 0.25;       // fraction of size
    double square_half_lo = 0.09, square_half_hi = 0.115;     // fraction of size
    double color_lo = 0.55, color_hi = 0.95;
    double background_noise = 0.02;
};

// class 0 = filled disk, class 1 = filled axis-aligned square; pure function
// of the spec.
Dataset synth_dataset(const SyntheticSpec& spec);

struct Batch {
    std::vector<int64_t> indices;
    std::vector<img::Image> images;

    Tensor to_tensor(DType dtype = DType::f32) const;  // [B,C,H,W]
    int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

// Epoch index order: seeded permutation of 0..N-1 (seed ^ epoch) when
// shuffling; the last partial batch is kept.
std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch_size, bool shuffle,
                                                uint64_t seed, int epoch);

// Materializes batches, optionally on worker threads; delivery order always
// equals the shuffled index order.
class BatchLoader {
public:
    BatchLoader(const Dataset& dataset, int64_t batch_size, bool shuffle, uint64_t seed,
                int epoch, int num_workers);
    ~BatchLoader();

    bool next(Batch& out);
    int64_t batch_count() const { return static_cast<int64_t>(plan_.size()); }

private:
    struct Prefetcher;
    const Dataset& dataset_;
    std::vector<std::vector<int64_t>> plan_;
    size_t cursor_ = 0;
    std::unique_ptr<Prefetcher> prefetcher_;
};

}  // namespace pretext::data
