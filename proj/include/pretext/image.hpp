#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pretext/rng.hpp"
#include "pretext/tensor.hpp"

namespace pretext::img {

// Float image in [0,1], row-major, channels-last.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    float at(int y, int x, int c) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    float& at(int y, int x, int c) {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    size_t size() const { return pixels.size(); }
};

Image make_image(int height, int width, int channels, float fill = 0.0f);

// CIE Lab planes: L in [0,100], a/b in [-128,127]. Only rgb_to_lab makes these.
struct LabImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // row-major, (L,a,b) channels-last

    float at(int y, int x, int c) const {
        return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
    }
};

// --- codecs ------------------------------------------------------------------

Image decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const Image& image);
Image read_ppm_file(const std::string& path);
void write_ppm_file(const std::string& path, const Image& image);

// --- geometry ---------------------------------------------------------------

// Counter-clockwise rotation by k*90 degrees.
Image rotate90(const Image& image, int k);

// Bilinear resize with half-pixel centers.
Image resize_bilinear(const Image& image, int out_h, int out_w);

Image crop(const Image& image, int top, int left, int height, int width);
Image hflip(const Image& image);

// --- augmentations ------------------------------------------------------------

Image random_resized_crop(const Image& image, double scale_lo, double scale_hi,
                          int out_size, Rng& rng);
Image color_jitter(const Image& image, double max_brightness, double max_contrast,
                   double max_saturation, Rng& rng);
Image stochastic_flip_gray(const Image& image, double p_flip, double p_gray, Rng& rng);
Image gaussian_noise(const Image& image, double sigma, Rng& rng);

struct EraseResult {
    Image image;
    std::vector<uint8_t> mask;  // H*W, 1 on erased pixels
};
EraseResult erase_rects(const Image& image, int n_lo, int n_hi, double area_lo,
                        double area_hi, const std::array<float, 3>& fill, Rng& rng);

// --- color space --------------------------------------------------------------

LabImage rgb_to_lab(const Image& image);
Image lab_to_rgb(const LabImage& lab);

// --- patches / jigsaw ----------------------------------------------------------

// grid*grid patches in row-major order, each patch x patch, jittered within its
// cell. The grid*cell region is centered in the image.
std::vector<Image> extract_patch_grid(const Image& image, int grid, int patch,
                                      int jitter, Rng& rng);

// Cell at row-major slot i receives the content of slot perm[i]. Non-divisible
// images are truncated (centered) to grid*cell.
Image jigsaw_shuffle(const Image& image, const std::vector<int>& perm, int grid);

struct PermutationTable {
    std::vector<std::vector<int>> perms;  // first entry is the identity
    int min_pairwise_hamming = 0;
};

// Greedy max-min Hamming selection; candidates are all n! permutations when
// n! <= 1e6, otherwise count*1000 seeded random draws. Ties resolve to the
// lexicographically smallest candidate.
PermutationTable build_permutation_set(int n, int count, uint64_t seed);

int hamming_distance(const std::vector<int>& a, const std::vector<int>& b);

// --- pipeline -----------------------------------------------------------------

struct CropStep { double scale_lo = 0.3, scale_hi = 1.0; int out_size = 32; };
struct JitterStep { double brightness = 0.4, contrast = 0.4, saturation = 0.4; };
struct FlipGrayStep { double p_flip = 0.5, p_gray = 0.25; };
struct NoiseStep { double sigma = 0.1; };
using AugStep = std::variant<CropStep, JitterStep, FlipGrayStep, NoiseStep>;

struct AugSpec {
    std::vector<AugStep> steps;
    uint64_t seed = 0;
};

// The default suite (strong crop + jitter + flip/gray) applied to every task
// that does not define its own view.
AugSpec default_aug_spec(int out_size);

Image augment_pipeline(const AugSpec& spec, const Image& image, Rng& rng);
Image augment_pipeline(const AugSpec& spec, const Image& image);  // rng from spec.seed

// --- tensor bridge --------------------------------------------------------------

// [C,H,W] tensor from channels-last image.
Tensor to_tensor(const Image& image, DType dtype = DType::f32);
Image from_tensor(const Tensor& chw);  // clamps to [0,1]

// Network-ready Lab planes: L/100 as [1,H,W] and (a,b)/128 as [2,H,W].
std::pair<Tensor, Tensor> lab_split_tensors(const LabImage& lab, DType dtype = DType::f32);

}  // namespace pretext::img
