#include "pretext/features.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "pretext/supervisors.hpp"

namespace pretext::features {

namespace {

Tensor preprocess(const std::vector<img::Image>& images, nn::InputMode mode, DType dtype) {
    switch (mode) {
        case nn::InputMode::rgb:
            return sup::images_to_tensor(images, dtype);
        case nn::InputMode::lab: {
            auto [l, ab] = sup::lab_batch(images, dtype);
            return concat(std::vector<Tensor>{l, ab}, 1);  // rescaled (L, a, b) planes
        }
        case nn::InputMode::lab_l: {
            auto [l, ab] = sup::lab_batch(images, dtype);
            return l;
        }
    }
    throw std::logic_error("unreachable input mode");
}

}  // namespace

Tensor extract_features(nn::ModuleGraph& backbone, const data::Dataset& dataset,
                        DType dtype, int64_t batch_size) {
    if (dataset.size() == 0) throw std::invalid_argument("empty dataset");
    std::vector<Tensor> chunks;
    for (int64_t start = 0; start < dataset.size(); start += batch_size) {
        int64_t stop = std::min(dataset.size(), start + batch_size);
        std::vector<img::Image> images(dataset.images.begin() + start,
                                       dataset.images.begin() + stop);
        Tensor x = preprocess(images, backbone.input_mode, dtype);
        chunks.push_back(backbone.forward(x, false));
    }
    return concat(chunks, 0);
}

void save_features(const std::string& path, const Tensor& features) {
    if (features.rank() != 2) throw std::invalid_argument("features must be [N,d]");
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write features " + path);
    f.write("SSFX", 4);
    auto put_u32 = [&f](uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        f.write(b, 4);
    };
    put_u32(static_cast<uint32_t>(features.dim(0)));
    put_u32(static_cast<uint32_t>(features.dim(1)));
    for (double v : features.data()) {
        float fv = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        f.write(b, 4);
    }
}

Tensor load_features(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open features " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.substr(0, 4) != "SSFX")
        throw std::runtime_error("bad feature file header");
    auto get_u32 = [&buf](size_t at) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[at + i])) << (8 * i);
        return v;
    };
    int64_t n = get_u32(4), d = get_u32(8);
    if (buf.size() != 12 + static_cast<size_t>(n * d) * 4)
        throw std::runtime_error("feature file size mismatch");
    std::vector<double> data(static_cast<size_t>(n * d));
    for (size_t i = 0; i < data.size(); ++i) {
        uint32_t bits = get_u32(12 + i * 4);
        float fv;
        std::memcpy(&fv, &bits, 4);
        data[i] = static_cast<double>(fv);
    }
    return Tensor::from_data({n, d}, std::move(data));
}

ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeConfig& config) {
    if (features.rank() != 2) throw std::invalid_argument("features must be [N,d]");
    int64_t n = features.dim(0), d = features.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("label count mismatch");
    int classes = 0;
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("probe needs labels for every item");
        classes = std::max(classes, l + 1);
    }
    if (classes < 2) throw std::invalid_argument("probe needs at least 2 classes");

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, 0x70726f62));
    rng.shuffle(order);
    int64_t n_train = std::max<int64_t>(1, static_cast<int64_t>(
                                               config.train_fraction * static_cast<double>(n)));
    n_train = std::min(n_train, n - 1);

    auto gather = [&](int64_t begin, int64_t end, Tensor& x, std::vector<int64_t>& y) {
        std::vector<double> rows;
        rows.reserve(static_cast<size_t>((end - begin) * d));
        for (int64_t i = begin; i < end; ++i) {
            int64_t src = order[static_cast<size_t>(i)];
            auto row = features.data().subspan(static_cast<size_t>(src * d),
                                               static_cast<size_t>(d));
            rows.insert(rows.end(), row.begin(), row.end());
            y.push_back(labels[static_cast<size_t>(src)]);
        }
        x = Tensor::from_data({end - begin, d}, std::move(rows), features.dtype());
    };
    Tensor x_train, x_val;
    std::vector<int64_t> y_train, y_val;
    gather(0, n_train, x_train, y_train);
    gather(n_train, n, x_val, y_val);

    Rng init_rng(mix_seed(config.seed, 0x696e6974));
    auto head = nn::build_mlp_head({static_cast<int>(d), classes}, false, init_rng,
                                   features.dtype());
    auto opt = nn::Optimizer::adam(head.parameters());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Tape tape;
        TapeScope scope(tape);
        auto logits = head.forward(x_train, true);
        auto loss = cross_entropy(logits, y_train);
        opt.zero_grad();
        tape.backward_from(loss);
        opt.step(config.lr);
    }

    auto accuracy = [&](const Tensor& x, const std::vector<int64_t>& y) {
        auto logits = head.forward(x, false);
        int64_t correct = 0;
        for (int64_t i = 0; i < x.dim(0); ++i) {
            int64_t best = 0;
            double best_v = logits.at({i, 0});
            for (int64_t c = 1; c < classes; ++c) {
                double v = logits.at({i, c});
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            correct += best == y[static_cast<size_t>(i)];
        }
        return static_cast<double>(correct) / static_cast<double>(x.dim(0));
    };

    ProbeResult result;
    result.classes = classes;
    result.train_count = n_train;
    result.val_count = n - n_train;
    result.train_accuracy = accuracy(x_train, y_train);
    result.val_accuracy = accuracy(x_val, y_val);
    return result;
}

}  // namespace pretext::features
