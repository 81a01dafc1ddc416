#include "gsinsert/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

#include "gsinsert/digest.hpp"
#include "gsinsert/errors.hpp"

namespace gsinsert {

double MaskImage::sum() const {
    double s = 0;
    for (double v : values) s += v;
    return s;
}

double MaskImage::max_value() const {
    double m = 0;
    for (double v : values) m = std::max(m, v);
    return m;
}

bool mask_pixel_on(double v) { return v >= 0.5; }

double mask_iou(const MaskImage& a, const MaskImage& b) {
    if (a.width != b.width || a.height != b.height) {
        throw Degenerate("mask_iou: image sizes differ");
    }
    long inter = 0, uni = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const bool pa = mask_pixel_on(a.values[i]);
        const bool pb = mask_pixel_on(b.values[i]);
        inter += (pa && pb);
        uni += (pa || pb);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_abs_diff(const RgbImage& a, const RgbImage& b) {
    if (a.width != b.width || a.height != b.height) {
        throw Degenerate("mean_abs_diff: image sizes differ");
    }
    double s = 0;
    for (size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
    return a.values.empty() ? 0.0 : s / static_cast<double>(a.values.size());
}

namespace {

unsigned char quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

struct ReadCursor {
    const std::string* bytes;
    size_t pos;
};

void read_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + length > cur->bytes->size()) {
        png_error(png, "png read past end of buffer");
    }
    std::memcpy(data, cur->bytes->data() + cur->pos, length);
    cur->pos += length;
}

std::string encode_png(int width, int height, int channels,
                       const std::vector<unsigned char>& pixels) {
    if (width <= 0 || height <= 0) throw Degenerate("png encode: empty image");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoFailure("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoFailure("png_create_info_struct failed");
    }
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoFailure("png encode failed");
    }
    png_set_write_fn(png, &out, append_bytes, flush_noop);
    const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, width, height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width * channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

std::vector<unsigned char> decode_png(const std::string& bytes, int want_channels, int* width,
                                      int* height) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8)) {
        throw IoFailure("not a PNG stream");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoFailure("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoFailure("png_create_info_struct failed");
    }
    ReadCursor cur{&bytes, 0};
    std::vector<unsigned char> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoFailure("png decode failed");
    }
    png_set_read_fn(png, &cur, read_bytes);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_expand(png);
    const png_byte color = png_get_color_type(png, info);
    if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) {
        png_set_gray_to_rgb(png);
    }
    if (want_channels == 1 &&
        (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
         color == PNG_COLOR_TYPE_PALETTE)) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);

    *width = static_cast<int>(png_get_image_width(png, info));
    *height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (channels != want_channels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoFailure("png decode: unexpected channel count");
    }
    pixels.resize(static_cast<size_t>(*width) * *height * channels);
    std::vector<png_bytep> rows(*height);
    for (int y = 0; y < *height; ++y) {
        rows[y] = pixels.data() + static_cast<size_t>(y) * *width * channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

}  // namespace

std::string png_encode_mask(const MaskImage& img) {
    std::vector<unsigned char> pixels(img.values.size());
    for (size_t i = 0; i < img.values.size(); ++i) pixels[i] = quantize(img.values[i]);
    return encode_png(img.width, img.height, 1, pixels);
}

MaskImage png_decode_mask(const std::string& bytes) {
    int w = 0, h = 0;
    const auto pixels = decode_png(bytes, 1, &w, &h);
    MaskImage img(w, h);
    for (size_t i = 0; i < pixels.size(); ++i) img.values[i] = pixels[i] / 255.0;
    return img;
}

std::string png_encode_rgb(const RgbImage& img) {
    std::vector<unsigned char> pixels(img.values.size());
    for (size_t i = 0; i < img.values.size(); ++i) pixels[i] = quantize(img.values[i]);
    return encode_png(img.width, img.height, 3, pixels);
}

RgbImage png_decode_rgb(const std::string& bytes) {
    int w = 0, h = 0;
    const auto pixels = decode_png(bytes, 3, &w, &h);
    RgbImage img(w, h);
    for (size_t i = 0; i < pixels.size(); ++i) img.values[i] = pixels[i] / 255.0;
    return img;
}

void save_png(const MaskImage& img, const std::string& path) {
    write_file_bytes(path, png_encode_mask(img));
}

void save_png(const RgbImage& img, const std::string& path) {
    write_file_bytes(path, png_encode_rgb(img));
}

MaskImage load_png_mask(const std::string& path) { return png_decode_mask(read_file_bytes(path)); }

RgbImage load_png_rgb(const std::string& path) { return png_decode_rgb(read_file_bytes(path)); }

}  // namespace gsinsert
