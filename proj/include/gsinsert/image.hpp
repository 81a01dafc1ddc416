// Image buffers and PNG persistence.
//
// MaskImage stores one channel in [0, 1]; RgbImage stores interleaved RGB.
// Rendered images keep values in [0, 1]; the same container is reused for
// unbounded per-pixel fields (noise, residuals) where no clamp applies.
#pragma once

#include <string>
#include <vector>

namespace gsinsert {

struct MaskImage {
    int width = 0;
    int height = 0;
    std::vector<double> values;  // row-major, size width * height

    MaskImage() = default;
    MaskImage(int w, int h, double fill = 0.0)
        : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

    double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }

    double sum() const;
    double max_value() const;
};

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<double> values;  // row-major, 3 per pixel (r, g, b)

    RgbImage() = default;
    RgbImage(int w, int h, double fill = 0.0)
        : width(w), height(h), values(static_cast<size_t>(w) * h * 3, fill) {}

    double& at(int x, int y, int c) {
        return values[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    double at(int x, int y, int c) const {
        return values[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// Real-valued 3-channel field with the same layout as RgbImage but no [0,1]
// range contract (noise fields, guidance residuals).
using NoiseImage = RgbImage;

// Binarize at the canonical threshold: value >= 0.5 is foreground.
bool mask_pixel_on(double v);

// Intersection-over-union of two equally-sized masks binarized at 0.5.
// Two empty masks have IoU 1.
double mask_iou(const MaskImage& a, const MaskImage& b);

// 8-bit grayscale PNG; pixels quantized as round(255 * clamp(v, 0, 1)).
std::string png_encode_mask(const MaskImage& img);
MaskImage png_decode_mask(const std::string& bytes);

// 8-bit RGB PNG with the same quantization per channel.
std::string png_encode_rgb(const RgbImage& img);
RgbImage png_decode_rgb(const std::string& bytes);

void save_png(const MaskImage& img, const std::string& path);
void save_png(const RgbImage& img, const std::string& path);
MaskImage load_png_mask(const std::string& path);
RgbImage load_png_rgb(const std::string& path);

// Mean absolute per-pixel difference across all channels.
double mean_abs_diff(const RgbImage& a, const RgbImage& b);

}  // namespace gsinsert
