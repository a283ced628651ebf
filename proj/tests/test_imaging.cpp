#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pretext/image.hpp"

using namespace pretext;
using namespace pretext::img;

namespace {

Image test_pattern(int h, int w, uint64_t seed) {
    Rng rng(seed);
    Image im = make_image(h, w, 3);
    for (float& v : im.pixels) v = static_cast<float>(rng.next_double());
    return im;
}

bool images_equal(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && a.channels == b.channels &&
           a.pixels == b.pixels;
}

}  // namespace

TEST_CASE("ppm decode/encode") {
    // 1x1 white pixel
    std::vector<uint8_t> white = {'P', '6', '\n', '1', ' ', '1', '\n', '2', '5', '5',
                                  '\n', 255, 255, 255};
    auto im = decode_ppm(white);
    CHECK(im.height == 1);
    CHECK(im.width == 1);
    CHECK(im.at(0, 0, 0) == 1.0f);
    CHECK(im.at(0, 0, 1) == 1.0f);
    CHECK(im.at(0, 0, 2) == 1.0f);

    // header comments are skipped
    std::string hdr = "P6\n# a comment\n2 1\n255\n";
    std::vector<uint8_t> with_comment(hdr.begin(), hdr.end());
    for (int i = 0; i < 6; ++i) with_comment.push_back(static_cast<uint8_t>(i * 40));
    auto im2 = decode_ppm(with_comment);
    CHECK(im2.width == 2);

    // quantized data round trips exactly
    auto src = test_pattern(5, 7, 1);
    auto bytes = encode_ppm(src);
    auto decoded = decode_ppm(bytes);
    CHECK(encode_ppm(decoded) == bytes);
    for (size_t i = 0; i < src.pixels.size(); ++i)
        CHECK(std::fabs(decoded.pixels[i] - src.pixels[i]) <= 1.0f / 510.0f + 1e-6f);

    std::vector<uint8_t> p5 = {'P', '5', '\n', '1', ' ', '1', '\n', '2', '5', '5', '\n', 0};
    CHECK_THROWS_AS(decode_ppm(p5), std::invalid_argument);

    std::vector<uint8_t> truncated(white.begin(), white.end() - 2);
    CHECK_THROWS_AS(decode_ppm(truncated), std::invalid_argument);

    std::vector<uint8_t> badmax = {'P', '6', '\n', '1', ' ', '1', '\n', '9', '9',
                                   '\n', 1, 1, 1};
    CHECK_THROWS_AS(decode_ppm(badmax), std::invalid_argument);
}

TEST_CASE("rotate90 group behaviour") {
    auto im = test_pattern(4, 6, 2);
    CHECK(images_equal(rotate90(im, 0), im));
    CHECK(images_equal(rotate90(rotate90(im, 1), 3), im));
    CHECK(images_equal(rotate90(rotate90(im, 2), 2), im));
    CHECK(images_equal(rotate90(im, 5), rotate90(im, 1)));

    // manual enumeration: [[A,B],[C,D]] k=1 -> [[B,D],[A,C]]
    Image q = make_image(2, 2, 1);
    q.at(0, 0, 0) = 1;  // A
    q.at(0, 1, 0) = 2;  // B
    q.at(1, 0, 0) = 3;  // C
    q.at(1, 1, 0) = 4;  // D
    auto r = rotate90(q, 1);
    CHECK(r.at(0, 0, 0) == 2);
    CHECK(r.at(0, 1, 0) == 4);
    CHECK(r.at(1, 0, 0) == 1);
    CHECK(r.at(1, 1, 0) == 3);

    // non-square swaps dimensions
    auto nr = rotate90(im, 1);
    CHECK(nr.height == im.width);
    CHECK(nr.width == im.height);
}

TEST_CASE("bilinear resize preserves constants") {
    auto c = make_image(9, 5, 3, 0.37f);
    auto r = resize_bilinear(c, 16, 16);
    for (float v : r.pixels) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("random_resized_crop") {
    auto im = test_pattern(16, 16, 3);
    Rng rng(0);
    auto out = random_resized_crop(im, 0.3, 1.0, 12, rng);
    CHECK(out.height == 12);
    CHECK(out.width == 12);
    for (float v : out.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    // degenerate scale range: the whole (square) image resized
    auto whole = make_image(8, 8, 3, 0.5f);
    Rng rng2(1);
    auto w = random_resized_crop(whole, 1.0, 1.0, 8, rng2);
    for (float v : w.pixels) CHECK(v == doctest::Approx(0.5f));

    // determinism
    Rng ra(9), rb(9);
    CHECK(images_equal(random_resized_crop(im, 0.3, 1.0, 10, ra),
                       random_resized_crop(im, 0.3, 1.0, 10, rb)));
}

TEST_CASE("color_jitter") {
    auto im = test_pattern(6, 6, 4);

    // zero ranges: identity
    Rng rng(3);
    CHECK(images_equal(color_jitter(im, 0, 0, 0, rng), im));

    // oracle: replay the same factor draws and apply the documented formulas
    Rng r1(17), r2(17);
    auto out = color_jitter(im, 0.4, 0.4, 0.4, r1);
    double fb = r2.uniform(0.6, 1.4), fc = r2.uniform(0.6, 1.4), fs = r2.uniform(0.6, 1.4);
    Image expect = im;
    auto clamp01f = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
    for (float& v : expect.pixels) v = clamp01f(v * fb);
    double mean = 0.0;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            mean += 0.299 * expect.at(y, x, 0) + 0.587 * expect.at(y, x, 1) +
                    0.114 * expect.at(y, x, 2);
    mean /= 36.0;
    for (float& v : expect.pixels) v = clamp01f(mean + (v - mean) * fc);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            double gray = 0.299 * expect.at(y, x, 0) + 0.587 * expect.at(y, x, 1) +
                          0.114 * expect.at(y, x, 2);
            for (int c = 0; c < 3; ++c)
                expect.at(y, x, c) = clamp01f(gray + (expect.at(y, x, c) - gray) * fs);
        }
    for (size_t i = 0; i < out.pixels.size(); ++i)
        CHECK(out.pixels[i] == doctest::Approx(expect.pixels[i]).epsilon(1e-6));
}

TEST_CASE("stochastic_flip_gray") {
    auto im = test_pattern(5, 8, 5);

    Rng a(1), b(2);
    auto once = stochastic_flip_gray(im, 1.0, 0.0, a);
    auto twice = stochastic_flip_gray(once, 1.0, 0.0, b);
    CHECK(images_equal(twice, im));  // flip is an involution

    Rng c(3);
    auto gray = stochastic_flip_gray(im, 0.0, 1.0, c);
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x) {
            CHECK(gray.at(y, x, 0) == gray.at(y, x, 1));
            CHECK(gray.at(y, x, 1) == gray.at(y, x, 2));
        }

    Rng d(4);
    CHECK(images_equal(stochastic_flip_gray(im, 0.0, 0.0, d), im));
}

TEST_CASE("gaussian_noise") {
    auto im = make_image(64, 64, 3, 0.5f);
    Rng rng(6);
    auto zero = gaussian_noise(im, 0.0, rng);
    CHECK(images_equal(zero, im));

    Rng rng2(7);
    auto noisy = gaussian_noise(im, 0.1, rng2);
    double var = 0.0;
    for (size_t i = 0; i < noisy.pixels.size(); ++i) {
        double d = noisy.pixels[i] - im.pixels[i];
        var += d * d;
        CHECK(noisy.pixels[i] >= 0.0f);
        CHECK(noisy.pixels[i] <= 1.0f);
    }
    double std = std::sqrt(var / static_cast<double>(noisy.pixels.size()));
    CHECK(std == doctest::Approx(0.1).epsilon(0.10));
}

TEST_CASE("erase_rects") {
    auto im = make_image(16, 16, 3, 0.9f);
    std::array<float, 3> fill = {0.1f, 0.2f, 0.3f};

    Rng none(1);
    auto empty = erase_rects(im, 0, 0, 0.1, 0.3, fill, none);
    CHECK(images_equal(empty.image, im));
    CHECK(std::accumulate(empty.mask.begin(), empty.mask.end(), 0) == 0);

    Rng rng(2);
    auto r = erase_rects(im, 1, 4, 0.1, 0.3, fill, rng);
    int modified = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            bool changed = r.image.at(y, x, 0) != im.at(y, x, 0);
            if (changed) {
                ++modified;
                CHECK(r.image.at(y, x, 0) == fill[0]);
                CHECK(r.image.at(y, x, 1) == fill[1]);
                CHECK(r.image.at(y, x, 2) == fill[2]);
            }
            CHECK(static_cast<int>(r.mask[y * 16 + x]) == (changed ? 1 : 0));
        }
    CHECK(modified == std::accumulate(r.mask.begin(), r.mask.end(), 0));
    CHECK(modified >= static_cast<int>(0.1 * 16 * 16));
}

TEST_CASE("lab conversion endpoints") {
    Image black = make_image(1, 1, 3, 0.0f);
    auto lb = rgb_to_lab(black);
    CHECK(lb.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(std::fabs(lb.at(0, 0, 1)) < 1e-3);
    CHECK(std::fabs(lb.at(0, 0, 2)) < 1e-3);

    Image white = make_image(1, 1, 3, 1.0f);
    auto lw = rgb_to_lab(white);
    CHECK(lw.at(0, 0, 0) == doctest::Approx(100.0).epsilon(1e-4));
    CHECK(std::fabs(lw.at(0, 0, 1)) < 0.01);
    CHECK(std::fabs(lw.at(0, 0, 2)) < 0.01);

    Image gray = make_image(1, 1, 3, 0.5f);
    auto lg = rgb_to_lab(gray);
    CHECK(std::fabs(lg.at(0, 0, 1)) < 0.01);
    CHECK(std::fabs(lg.at(0, 0, 2)) < 0.01);
}

TEST_CASE("lab round trip over rgb lattice") {
    Image im = make_image(16, 16 * 16, 3);
    int idx = 0;
    for (int r = 0; r < 16; ++r)
        for (int g = 0; g < 16; ++g)
            for (int b = 0; b < 16; ++b) {
                int y = idx / (16 * 16), x = idx % (16 * 16);
                im.at(y, x, 0) = static_cast<float>(r) / 15.0f;
                im.at(y, x, 1) = static_cast<float>(g) / 15.0f;
                im.at(y, x, 2) = static_cast<float>(b) / 15.0f;
                ++idx;
            }
    auto rt = lab_to_rgb(rgb_to_lab(im));
    float max_err = 0.0f;
    for (size_t i = 0; i < im.pixels.size(); ++i)
        max_err = std::max(max_err, std::fabs(rt.pixels[i] - im.pixels[i]));
    CHECK(max_err < 1e-3f);
}

TEST_CASE("patch grid") {
    auto im = test_pattern(33, 33, 8);
    Rng rng(1);
    auto patches = extract_patch_grid(im, 3, 11, 0, rng);
    REQUIRE(patches.size() == 9);
    // exact tiling: reassembly reproduces the image
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 11; ++y)
                for (int x = 0; x < 11; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        CHECK(patches[r * 3 + c].at(y, x, ch) ==
                              im.at(r * 11 + y, c * 11 + x, ch));

    // degenerate grid: whole-image center crop
    Rng rng2(2);
    auto whole = extract_patch_grid(im, 1, 33, 0, rng2);
    REQUIRE(whole.size() == 1);
    CHECK(images_equal(whole[0], im));

    Rng rng3(3);
    CHECK_THROWS_AS(extract_patch_grid(im, 3, 12, 0, rng3), std::invalid_argument);
}

TEST_CASE("jigsaw shuffle") {
    auto im = test_pattern(12, 12, 9);
    std::vector<int> identity(9);
    std::iota(identity.begin(), identity.end(), 0);
    CHECK(images_equal(jigsaw_shuffle(im, identity, 3), im));

    // perm then inverse recovers the image
    std::vector<int> perm = {4, 2, 0, 8, 6, 1, 3, 7, 5};
    std::vector<int> inv(9);
    for (int i = 0; i < 9; ++i) inv[perm[i]] = i;
    auto shuffled = jigsaw_shuffle(im, perm, 3);
    CHECK(images_equal(jigsaw_shuffle(shuffled, inv, 3), im));

    // 2x2 labeled quadrants exchange
    Image q = make_image(4, 4, 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            q.at(y, x, 0) = static_cast<float>((y / 2) * 2 + (x / 2));  // quadrant id
    auto sw = jigsaw_shuffle(q, {1, 0, 3, 2}, 2);
    CHECK(sw.at(0, 0, 0) == 1);
    CHECK(sw.at(0, 3, 0) == 0);
    CHECK(sw.at(3, 0, 0) == 3);
    CHECK(sw.at(3, 3, 0) == 2);

    CHECK_THROWS_AS(jigsaw_shuffle(im, {0, 0, 2, 3, 4, 5, 6, 7, 8}, 3),
                    std::invalid_argument);
}

TEST_CASE("permutation table: brute force n=3") {
    auto table = build_permutation_set(3, 2, 0);
    REQUIRE(table.perms.size() == 2);
    CHECK(table.perms[0] == std::vector<int>{0, 1, 2});
    // oracle: scan all 6 permutations for max distance, lexicographic tie-break
    std::vector<std::vector<int>> all;
    std::vector<int> p = {0, 1, 2};
    do {
        all.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    int best = -1;
    std::vector<int> best_perm;
    for (const auto& cand : all) {
        int d = hamming_distance(cand, {0, 1, 2});
        if (d > best) {
            best = d;
            best_perm = cand;
        }
    }
    CHECK(best == 3);
    CHECK(table.perms[1] == best_perm);
    CHECK(table.min_pairwise_hamming == 3);
}

TEST_CASE("permutation table n=9") {
    // middle element fixed under full reversal
    std::vector<int> rev(9);
    for (int i = 0; i < 9; ++i) rev[i] = 8 - i;
    std::vector<int> id(9);
    std::iota(id.begin(), id.end(), 0);
    CHECK(hamming_distance(id, rev) == 8);

    auto t1 = build_permutation_set(9, 8, 5);
    auto t2 = build_permutation_set(9, 8, 5);
    REQUIRE(t1.perms.size() == 8);
    CHECK(t1.perms == t2.perms);
    CHECK(t1.perms[0] == id);

    std::set<std::vector<int>> uniq(t1.perms.begin(), t1.perms.end());
    CHECK(uniq.size() == 8);

    // recorded min distance matches an exhaustive pair scan
    int min_d = 9;
    for (size_t i = 0; i < t1.perms.size(); ++i)
        for (size_t j = i + 1; j < t1.perms.size(); ++j)
            min_d = std::min(min_d, hamming_distance(t1.perms[i], t1.perms[j]));
    CHECK(t1.min_pairwise_hamming == min_d);
    CHECK(min_d >= 7);

    CHECK_THROWS_AS(build_permutation_set(3, 7, 0), std::invalid_argument);
}

TEST_CASE("augment pipeline") {
    auto im = test_pattern(20, 20, 11);

    AugSpec empty;
    Rng rng(1);
    CHECK(images_equal(augment_pipeline(empty, im, rng), im));

    auto spec = default_aug_spec(16);
    spec.seed = 99;
    auto a = augment_pipeline(spec, im);
    auto b = augment_pipeline(spec, im);
    CHECK(images_equal(a, b));
    CHECK(a.height == 16);
    CHECK(a.width == 16);
    for (float v : a.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("image tensor bridge") {
    auto im = test_pattern(4, 5, 12);
    auto t = to_tensor(im);
    CHECK(t.shape() == Shape{3, 4, 5});
    CHECK(t.at({1, 2, 3}) == doctest::Approx(im.at(2, 3, 1)));
    auto back = from_tensor(t);
    for (size_t i = 0; i < im.pixels.size(); ++i)
        CHECK(back.pixels[i] == doctest::Approx(im.pixels[i]).epsilon(1e-6));

    auto lab = rgb_to_lab(im);
    auto [l, ab] = lab_split_tensors(lab);
    CHECK(l.shape() == Shape{1, 4, 5});
    CHECK(ab.shape() == Shape{2, 4, 5});
    CHECK(l.at({0, 1, 1}) == doctest::Approx(lab.at(1, 1, 0) / 100.0).epsilon(1e-6));
    CHECK(ab.at({1, 2, 2}) == doctest::Approx(lab.at(2, 2, 2) / 128.0).epsilon(1e-6));
}
