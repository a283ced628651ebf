#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pretext/image.hpp"

namespace pretext::img {

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double luma(const Image& im, int y, int x) {
    if (im.channels == 3)
        return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
    return im.at(y, x, 0);
}

}  // namespace

Image random_resized_crop(const Image& image, double scale_lo, double scale_hi,
                          int out_size, Rng& rng) {
    if (out_size < 1) throw std::invalid_argument("out_size must be >= 1");
    if (scale_lo <= 0.0 || scale_hi < scale_lo)
        throw std::invalid_argument("invalid crop scale range");
    int h = image.height, w = image.width;
    double area = static_cast<double>(h) * w;

    int ch = 0, cw = 0, top = 0, left = 0;
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        double target = area * rng.uniform(scale_lo, scale_hi);
        double aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0);
        cw = static_cast<int>(std::lround(std::sqrt(target * aspect)));
        ch = static_cast<int>(std::lround(std::sqrt(target / aspect)));
        if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
            top = static_cast<int>(rng.uniform_int(0, h - ch));
            left = static_cast<int>(rng.uniform_int(0, w - cw));
            ok = true;
        }
    }
    if (!ok) {  // center-crop fallback
        int side = std::min(h, w);
        ch = cw = side;
        top = (h - side) / 2;
        left = (w - side) / 2;
    }
    return resize_bilinear(crop(image, top, left, ch, cw), out_size, out_size);
}

Image color_jitter(const Image& image, double max_brightness, double max_contrast,
                   double max_saturation, Rng& rng) {
    double fb = rng.uniform(1.0 - max_brightness, 1.0 + max_brightness);
    double fc = rng.uniform(1.0 - max_contrast, 1.0 + max_contrast);
    double fs = rng.uniform(1.0 - max_saturation, 1.0 + max_saturation);

    Image out = image;
    // brightness
    for (float& v : out.pixels) v = clamp01(v * fb);
    // contrast around the global gray mean
    double mean = 0.0;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) mean += luma(out, y, x);
    mean /= static_cast<double>(out.height) * out.width;
    for (float& v : out.pixels) v = clamp01(mean + (v - mean) * fc);
    // saturation toward per-pixel gray
    if (out.channels == 3) {
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                double gray = luma(out, y, x);
                for (int c = 0; c < 3; ++c)
                    out.at(y, x, c) = clamp01(gray + (out.at(y, x, c) - gray) * fs);
            }
    }
    return out;
}

Image stochastic_flip_gray(const Image& image, double p_flip, double p_gray, Rng& rng) {
    if (p_flip < 0 || p_flip > 1 || p_gray < 0 || p_gray > 1)
        throw std::invalid_argument("probabilities must be in [0,1]");
    bool do_flip = rng.bernoulli(p_flip);
    bool do_gray = rng.bernoulli(p_gray);
    Image out = do_flip ? hflip(image) : image;
    if (do_gray && out.channels == 3) {
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                float g = static_cast<float>(luma(out, y, x));
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = g;
            }
    }
    return out;
}

Image gaussian_noise(const Image& image, double sigma, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
    Image out = image;
    if (sigma == 0.0) return out;
    for (float& v : out.pixels) v = clamp01(v + rng.normal(0.0, sigma));
    return out;
}

EraseResult erase_rects(const Image& image, int n_lo, int n_hi, double area_lo,
                        double area_hi, const std::array<float, 3>& fill, Rng& rng) {
    if (n_lo < 0 || n_hi < n_lo) throw std::invalid_argument("invalid rect count range");
    if (area_lo < 0 || area_hi < area_lo || area_hi > 1)
        throw std::invalid_argument("invalid area range");
    int h = image.height, w = image.width;
    size_t min_pixels =
        static_cast<size_t>(std::floor(area_lo * static_cast<double>(h) * w));

    std::vector<uint8_t> mask;
    for (int attempt = 0; attempt < 10; ++attempt) {
        mask.assign(static_cast<size_t>(h) * w, 0);
        int n = static_cast<int>(rng.uniform_int(n_lo, n_hi));
        for (int r = 0; r < n; ++r) {
            double frac = rng.uniform(area_lo, area_hi);
            double aspect = rng.uniform(0.5, 2.0);
            int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * h * w * aspect))), 1, w);
            int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * h * w / aspect))), 1, h);
            int top = static_cast<int>(rng.uniform_int(0, h - rh));
            int left = static_cast<int>(rng.uniform_int(0, w - rw));
            for (int y = top; y < top + rh; ++y)
                for (int x = left; x < left + rw; ++x)
                    mask[static_cast<size_t>(y * w + x)] = 1;
        }
        size_t erased = 0;
        for (uint8_t m : mask) erased += m;
        if (erased >= min_pixels || n == 0) break;
    }

    EraseResult result{image, mask};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask[static_cast<size_t>(y * w + x)])
                for (int c = 0; c < image.channels; ++c)
                    result.image.at(y, x, c) = fill[static_cast<size_t>(c)];
    return result;
}

AugSpec default_aug_spec(int out_size) {
    AugSpec spec;
    spec.steps.push_back(CropStep{0.3, 1.0, out_size});
    spec.steps.push_back(JitterStep{0.4, 0.4, 0.4});
    spec.steps.push_back(FlipGrayStep{0.5, 0.25});
    return spec;
}

Image augment_pipeline(const AugSpec& spec, const Image& image, Rng& rng) {
    Image out = image;
    for (const AugStep& step : spec.steps) {
        if (const auto* c = std::get_if<CropStep>(&step)) {
            out = random_resized_crop(out, c->scale_lo, c->scale_hi, c->out_size, rng);
        } else if (const auto* j = std::get_if<JitterStep>(&step)) {
            out = color_jitter(out, j->brightness, j->contrast, j->saturation, rng);
        } else if (const auto* f = std::get_if<FlipGrayStep>(&step)) {
            out = stochastic_flip_gray(out, f->p_flip, f->p_gray, rng);
        } else if (const auto* g = std::get_if<NoiseStep>(&step)) {
            out = gaussian_noise(out, g->sigma, rng);
        }
    }
    return out;
}

Image augment_pipeline(const AugSpec& spec, const Image& image) {
    Rng rng(spec.seed);
    return augment_pipeline(spec, image, rng);
}

}  // namespace pretext::img
