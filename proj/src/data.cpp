#include "pretext/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pretext::data {

namespace fs = std::filesystem;

bool Dataset::has_labels() const {
    return !labels.empty() && std::all_of(labels.begin(), labels.end(),
                                          [](int l) { return l >= 0; });
}

int Dataset::num_classes() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
}

std::array<float, 3> Dataset::channel_mean() const {
    std::array<double, 3> acc = {0, 0, 0};
    size_t count = 0;
    for (const auto& im : images) {
        for (int y = 0; y < im.height; ++y)
            for (int x = 0; x < im.width; ++x)
                for (int c = 0; c < im.channels; ++c)
                    acc[static_cast<size_t>(c)] += im.at(y, x, c);
        count += static_cast<size_t>(im.height) * im.width;
    }
    std::array<float, 3> out{};
    for (int c = 0; c < 3; ++c)
        out[static_cast<size_t>(c)] =
            count ? static_cast<float>(acc[static_cast<size_t>(c)] / static_cast<double>(count)) : 0.0f;
    return out;
}

Dataset dataset_from_dir(const std::string& path, int resolution) {
    if (!fs::is_directory(path)) throw std::runtime_error("not a directory: " + path);

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ppm")
            files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("empty dataset: no .ppm files in " + path);

    std::map<std::string, int> label_map;
    fs::path labels_file = fs::path(path) / "labels.tsv";
    bool have_labels = fs::exists(labels_file);
    if (have_labels) {
        std::ifstream lf(labels_file);
        std::string line;
        while (std::getline(lf, line)) {
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error("labels.tsv line missing tab: " + line);
            label_map[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
        }
        for (const auto& [name, label] : label_map)
            if (std::find(files.begin(), files.end(), name) == files.end())
                throw std::runtime_error("labels.tsv references missing image " + name);
    }

    Dataset ds;
    ds.resolution = resolution;
    for (const std::string& name : files) {
        auto im = img::read_ppm_file((fs::path(path) / name).string());
        ds.images.push_back(img::resize_bilinear(im, resolution, resolution));
        int label = -1;
        if (have_labels) {
            auto it = label_map.find(name);
            label = it == label_map.end() ? -1 : it->second;
        }
        ds.labels.push_back(label);
    }
    return ds;
}

Dataset synth_dataset(const SyntheticSpec& spec) {
    if (spec.n_per_class < 1) throw std::invalid_argument("n_per_class must be >= 1");
    if (spec.size < 8) throw std::invalid_argument("size too small to draw shapes (< 8 px)");
    Rng rng(mix_seed(spec.seed, 0x73796e74));
    Dataset ds;
    ds.resolution = spec.size;
    int s = spec.size;

    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < spec.n_per_class; ++i) {
            img::Image im = img::make_image(s, s, 3);
            for (float& v : im.pixels)
                v = static_cast<float>(std::clamp(rng.normal(0.10, spec.background_noise), 0.0, 1.0));

            float color[3];
            for (float& c : color) c = static_cast<float>(rng.uniform(spec.color_lo, spec.color_hi));

            double cy = s / 2.0 + s * rng.uniform(spec.offset_lo, spec.offset_hi);
            double cx = s / 2.0 + s * rng.uniform(spec.offset_lo, spec.offset_hi);

            if (cls == 0) {
                double radius = std::max(1.0, s * rng.uniform(spec.disk_radius_lo, spec.disk_radius_hi));
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x) {
                        double dy = y - cy, dx = x - cx;
                        if (dy * dy + dx * dx <= radius * radius)
                            for (int c = 0; c < 3; ++c) im.at(y, x, c) = color[c];
                    }
            } else {
                double half = std::max(1.0, s * rng.uniform(spec.square_half_lo, spec.square_half_hi));
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x)
                        if (std::fabs(y - cy) <= half && std::fabs(x - cx) <= half)
                            for (int c = 0; c < 3; ++c) im.at(y, x, c) = color[c];
            }
            ds.images.push_back(std::move(im));
            ds.labels.push_back(cls);
        }
    }
    return ds;
}

Tensor Batch::to_tensor(DType dtype) const {
    if (images.empty()) throw std::invalid_argument("empty batch");
    int c = images[0].channels, h = images[0].height, w = images[0].width;
    std::vector<double> data(static_cast<size_t>(images.size()) * c * h * w);
    for (size_t b = 0; b < images.size(); ++b) {
        const auto& im = images[b];
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    data[((b * c + ch) * h + y) * w + x] = im.at(y, x, ch);
    }
    return Tensor::from_data({static_cast<int64_t>(images.size()), c, h, w}, std::move(data),
                             dtype);
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch_size, bool shuffle,
                                                uint64_t seed, int epoch) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(seed ^ static_cast<uint64_t>(epoch));
        rng.shuffle(order);
    }
    std::vector<std::vector<int64_t>> out;
    for (int64_t start = 0; start < n; start += batch_size) {
        int64_t stop = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + stop);
    }
    return out;
}

// Workers claim batch slots through an atomic cursor and publish them in
// order; the consumer blocks on the next unfilled slot.
struct BatchLoader::Prefetcher {
    std::vector<Batch> slots;
    std::vector<uint8_t> ready;
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<size_t> next_job{0};
    std::vector<std::thread> threads;

    ~Prefetcher() {
        for (auto& t : threads)
            if (t.joinable()) t.join();
    }
};

BatchLoader::BatchLoader(const Dataset& dataset, int64_t batch_size, bool shuffle,
                         uint64_t seed, int epoch, int num_workers)
    : dataset_(dataset),
      plan_(epoch_batches(dataset.size(), batch_size, shuffle, seed, epoch)) {
    if (num_workers <= 0) return;
    prefetcher_ = std::make_unique<Prefetcher>();
    prefetcher_->slots.resize(plan_.size());
    prefetcher_->ready.assign(plan_.size(), 0);
    auto* pf = prefetcher_.get();
    const Dataset* ds = &dataset_;
    const auto* plan = &plan_;
    for (int w = 0; w < num_workers; ++w) {
        pf->threads.emplace_back([pf, ds, plan]() {
            while (true) {
                size_t job = pf->next_job.fetch_add(1);
                if (job >= plan->size()) return;
                Batch b;
                b.indices = (*plan)[job];
                for (int64_t idx : b.indices)
                    b.images.push_back(ds->images[static_cast<size_t>(idx)]);
                {
                    std::lock_guard<std::mutex> lock(pf->mu);
                    pf->slots[job] = std::move(b);
                    pf->ready[job] = 1;
                }
                pf->cv.notify_all();
            }
        });
    }
}

BatchLoader::~BatchLoader() = default;

bool BatchLoader::next(Batch& out) {
    if (cursor_ >= plan_.size()) return false;
    if (prefetcher_) {
        std::unique_lock<std::mutex> lock(prefetcher_->mu);
        prefetcher_->cv.wait(lock, [&] { return prefetcher_->ready[cursor_] != 0; });
        out = std::move(prefetcher_->slots[cursor_]);
    } else {
        out.indices = plan_[cursor_];
        out.images.clear();
        for (int64_t idx : out.indices)
            out.images.push_back(dataset_.images[static_cast<size_t>(idx)]);
    }
    ++cursor_;
    return true;
}

}  // namespace pretext::data
