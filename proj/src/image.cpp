#include "pretext/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pretext::img {

Image make_image(int height, int width, int channels, float fill) {
    if (height < 1 || width < 1 || channels < 1 || channels > 3)
        throw std::invalid_argument("image dims must be positive with 1..3 channels");
    Image im;
    im.height = height;
    im.width = width;
    im.channels = channels;
    im.pixels.assign(static_cast<size_t>(height) * width * channels, fill);
    return im;
}

// --- PPM (binary P6, maxval 255) ---------------------------------------------

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string ppm_token(const std::vector<uint8_t>& bytes, size_t& pos) {
    while (pos < bytes.size()) {
        char c = static_cast<char>(bytes[pos]);
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw std::invalid_argument("truncated ppm header");
    return std::string(bytes.begin() + start, bytes.begin() + pos);
}

}  // namespace

Image decode_ppm(const std::vector<uint8_t>& bytes) {
    size_t pos = 0;
    std::string magic = ppm_token(bytes, pos);
    if (magic != "P6") throw std::invalid_argument("bad ppm magic, expected P6");
    int width = std::stoi(ppm_token(bytes, pos));
    int height = std::stoi(ppm_token(bytes, pos));
    int maxval = std::stoi(ppm_token(bytes, pos));
    if (maxval != 255) throw std::invalid_argument("ppm maxval must be 255");
    if (pos >= bytes.size()) throw std::invalid_argument("truncated ppm pixel data");
    ++pos;  // single whitespace after maxval
    size_t need = static_cast<size_t>(width) * height * 3;
    if (bytes.size() - pos < need) throw std::invalid_argument("truncated ppm pixel data");

    Image im = make_image(height, width, 3);
    for (size_t i = 0; i < need; ++i)
        im.pixels[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
    return im;
}

std::vector<uint8_t> encode_ppm(const Image& image) {
    if (image.channels != 3) throw std::invalid_argument("encode_ppm expects 3 channels");
    char header[64];
    int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", image.width, image.height);
    std::vector<uint8_t> out(header, header + n);
    out.reserve(out.size() + image.pixels.size());
    for (float v : image.pixels) {
        float clamped = std::min(1.0f, std::max(0.0f, v));
        out.push_back(static_cast<uint8_t>(std::lround(clamped * 255.0f)));
    }
    return out;
}

Image read_ppm_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

void write_ppm_file(const std::string& path, const Image& image) {
    auto bytes = encode_ppm(image);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// --- geometry ------------------------------------------------------------------

Image rotate90(const Image& image, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return image;
    int h = image.height, w = image.width, c = image.channels;
    Image out = (k == 2) ? make_image(h, w, c) : make_image(w, h, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                float v = image.at(y, x, ch);
                switch (k) {
                    case 1: out.at(w - 1 - x, y, ch) = v; break;          // 90 ccw
                    case 2: out.at(h - 1 - y, w - 1 - x, ch) = v; break;  // 180
                    case 3: out.at(x, h - 1 - y, ch) = v; break;          // 270 ccw
                }
            }
    return out;
}

Image resize_bilinear(const Image& image, int out_h, int out_w) {
    if (out_h == image.height && out_w == image.width) return image;
    Image out = make_image(out_h, out_w, image.channels);
    double sy = static_cast<double>(image.height) / out_h;
    double sx = static_cast<double>(image.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double src_y = (y + 0.5) * sy - 0.5;
        double fy = std::clamp(src_y, 0.0, static_cast<double>(image.height - 1));
        int y0 = static_cast<int>(std::floor(fy));
        int y1 = std::min(y0 + 1, image.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double src_x = (x + 0.5) * sx - 0.5;
            double fx = std::clamp(src_x, 0.0, static_cast<double>(image.width - 1));
            int x0 = static_cast<int>(std::floor(fx));
            int x1 = std::min(x0 + 1, image.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                double top = (1.0 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                double bot = (1.0 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

Image crop(const Image& image, int top, int left, int height, int width) {
    if (top < 0 || left < 0 || top + height > image.height || left + width > image.width)
        throw std::invalid_argument("crop out of bounds");
    Image out = make_image(height, width, image.channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < image.channels; ++c)
                out.at(y, x, c) = image.at(top + y, left + x, c);
    return out;
}

Image hflip(const Image& image) {
    Image out = make_image(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c)
                out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
    return out;
}

// --- patches / jigsaw -------------------------------------------------------------

std::vector<Image> extract_patch_grid(const Image& image, int grid, int patch,
                                      int jitter, Rng& rng) {
    if (grid < 1) throw std::invalid_argument("grid must be >= 1");
    int cell = std::min(image.height, image.width) / grid;
    if (patch > cell) throw std::invalid_argument("patch larger than grid cell");
    if (jitter > cell - patch) throw std::invalid_argument("jitter exceeds cell - patch");
    int top0 = (image.height - grid * cell) / 2;
    int left0 = (image.width - grid * cell) / 2;
    std::vector<Image> patches;
    patches.reserve(static_cast<size_t>(grid) * grid);
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c) {
            int jy = 0, jx = 0;
            if (jitter > 0) {
                jy = static_cast<int>(rng.uniform_int(0, jitter));
                jx = static_cast<int>(rng.uniform_int(0, jitter));
            }
            patches.push_back(
                crop(image, top0 + r * cell + jy, left0 + c * cell + jx, patch, patch));
        }
    return patches;
}

Image jigsaw_shuffle(const Image& image, const std::vector<int>& perm, int grid) {
    int n = grid * grid;
    if (static_cast<int>(perm.size()) != n)
        throw std::invalid_argument("jigsaw perm length must be grid^2");
    std::vector<bool> seen(static_cast<size_t>(n), false);
    for (int v : perm) {
        if (v < 0 || v >= n || seen[static_cast<size_t>(v)])
            throw std::invalid_argument("invalid jigsaw permutation");
        seen[static_cast<size_t>(v)] = true;
    }
    int cell = std::min(image.height, image.width) / grid;
    if (cell < 1) throw std::invalid_argument("image too small for jigsaw grid");
    int top0 = (image.height - grid * cell) / 2;
    int left0 = (image.width - grid * cell) / 2;
    Image out = make_image(grid * cell, grid * cell, image.channels);
    for (int slot = 0; slot < n; ++slot) {
        int sr = perm[static_cast<size_t>(slot)] / grid, sc = perm[static_cast<size_t>(slot)] % grid;
        int dr = slot / grid, dc = slot % grid;
        for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x)
                for (int ch = 0; ch < image.channels; ++ch)
                    out.at(dr * cell + y, dc * cell + x, ch) =
                        image.at(top0 + sr * cell + y, left0 + sc * cell + x, ch);
    }
    return out;
}

// --- tensor bridge -----------------------------------------------------------------

Tensor to_tensor(const Image& image, DType dtype) {
    int h = image.height, w = image.width, c = image.channels;
    std::vector<double> data(static_cast<size_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                data[static_cast<size_t>((ch * h + y) * w + x)] = image.at(y, x, ch);
    return Tensor::from_data({c, h, w}, std::move(data), dtype);
}

Image from_tensor(const Tensor& chw) {
    if (chw.rank() != 3) throw std::invalid_argument("from_tensor expects [C,H,W]");
    int c = static_cast<int>(chw.dim(0)), h = static_cast<int>(chw.dim(1)),
        w = static_cast<int>(chw.dim(2));
    Image out = make_image(h, w, c);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = chw.at({ch, y, x});
                out.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    return out;
}

std::pair<Tensor, Tensor> lab_split_tensors(const LabImage& lab, DType dtype) {
    int h = lab.height, w = lab.width;
    std::vector<double> l(static_cast<size_t>(h) * w);
    std::vector<double> ab(2 * static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            l[static_cast<size_t>(y * w + x)] = lab.at(y, x, 0) / 100.0;
            ab[static_cast<size_t>(y * w + x)] = lab.at(y, x, 1) / 128.0;
            ab[static_cast<size_t>(h) * w + y * w + x] = lab.at(y, x, 2) / 128.0;
        }
    return {Tensor::from_data({1, h, w}, std::move(l), dtype),
            Tensor::from_data({2, h, w}, std::move(ab), dtype)};
}

}  // namespace pretext::img
