#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pretext/image.hpp"

namespace pretext::img {

// sRGB <-> CIE Lab under D65. Everything computed in double; the piecewise
// gamma uses the standard 2.4 curve with the linear toe.

namespace {

constexpr double kXn = 0.95047;
constexpr double kYn = 1.00000;
constexpr double kZn = 1.08883;
constexpr double kDelta3 = 216.0 / 24389.0;  // (6/29)^3
constexpr double kKappa = 24389.0 / 27.0;

double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
    return t > kDelta3 ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double t) {
    double t3 = t * t * t;
    return t3 > kDelta3 ? t3 : (116.0 * t - 16.0) / kKappa;
}

}  // namespace

LabImage rgb_to_lab(const Image& image) {
    if (image.channels != 3) throw std::invalid_argument("rgb_to_lab expects 3 channels");
    LabImage out;
    out.height = image.height;
    out.width = image.width;
    out.pixels.resize(image.pixels.size());
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            double r = srgb_to_linear(image.at(y, x, 0));
            double g = srgb_to_linear(image.at(y, x, 1));
            double b = srgb_to_linear(image.at(y, x, 2));
            double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
            double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
            double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
            double fx = lab_f(X / kXn), fy = lab_f(Y / kYn), fz = lab_f(Z / kZn);
            size_t base = static_cast<size_t>((y * image.width + x) * 3);
            out.pixels[base + 0] = static_cast<float>(116.0 * fy - 16.0);
            out.pixels[base + 1] = static_cast<float>(500.0 * (fx - fy));
            out.pixels[base + 2] = static_cast<float>(200.0 * (fy - fz));
        }
    return out;
}

Image lab_to_rgb(const LabImage& lab) {
    Image out = make_image(lab.height, lab.width, 3);
    for (int y = 0; y < lab.height; ++y)
        for (int x = 0; x < lab.width; ++x) {
            double L = lab.at(y, x, 0), a = lab.at(y, x, 1), b = lab.at(y, x, 2);
            double fy = (L + 16.0) / 116.0;
            double fx = fy + a / 500.0;
            double fz = fy - b / 200.0;
            double X = kXn * lab_f_inv(fx);
            double Y = kYn * lab_f_inv(fy);
            double Z = kZn * lab_f_inv(fz);
            double r = 3.2404542 * X - 1.5371385 * Y - 0.4985314 * Z;
            double g = -0.9692660 * X + 1.8760108 * Y + 0.0415560 * Z;
            double bb = 0.0556434 * X - 0.2040259 * Y + 1.0572252 * Z;
            out.at(y, x, 0) = static_cast<float>(std::clamp(linear_to_srgb(r), 0.0, 1.0));
            out.at(y, x, 1) = static_cast<float>(std::clamp(linear_to_srgb(g), 0.0, 1.0));
            out.at(y, x, 2) = static_cast<float>(std::clamp(linear_to_srgb(bb), 0.0, 1.0));
        }
    return out;
}

}  // namespace pretext::img
