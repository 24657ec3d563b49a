#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "artifact/tensor.hpp"

namespace artifact {

// Luminance weights shared by the edge pipeline and SSIM grayscale conversion.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// RGB image, height x width x 3, values in [0,1], row-major HWC.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // size height*width*3

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * 3 + c];
    }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

    bool in_unit_range(double tol = 0.0) const {
        for (double v : data)
            if (v < -tol || v > 1.0 + tol) return false;
        return true;
    }
};

inline Tensor image_to_chw(const Image& img) {
    Tensor t({3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = img.at(y, x, c);
    return t;
}

inline Image chw_to_image(const Tensor& t) {
    const auto& s = t.shape();
    if (s.size() != 3 || s[0] != 3) throw std::invalid_argument("chw_to_image: expected [3,H,W]");
    Image img(s[1], s[2]);
    for (int y = 0; y < s[1]; ++y)
        for (int x = 0; x < s[2]; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = t.at(c, y, x);
    return img;
}

// Grayscale H x W tensor using the shared luminance weights.
inline Tensor to_grayscale(const Image& img) {
    Tensor g({img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g[y * img.width + x] =
                kLumaR * img.at(y, x, 0) + kLumaG * img.at(y, x, 1) + kLumaB * img.at(y, x, 2);
    return g;
}

// Center-crop to square then bilinear-resize to size x size.
Image center_crop_resize(const Image& src, int size);

}  // namespace artifact
