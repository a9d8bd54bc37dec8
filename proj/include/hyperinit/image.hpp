#pragma once

#include <png.h>

#include <cstdio>

#include "hyperinit/tensor.hpp"

namespace hyperinit {

// Images are float tensors [C,H,W] with values in [0,1].

inline TensorPtr<float> read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open image '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng init failed for '" + path + "'");
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("'" + path + "' is not a readable PNG");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);           // palette/low-bit -> 8 bit
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = static_cast<int>(png_get_channels(png, info));
    raw.resize(static_cast<size_t>(h) * w * channels);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    auto t = make_tensor<float>({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t->data[(static_cast<size_t>(c) * h + y) * w + x] =
                    raw[(static_cast<size_t>(y) * w + x) * channels + (c < channels ? c : channels - 1)] / 255.0f;
    return t;
}

// accepts [3,H,W] or [1,H,W]
inline void write_png(const std::string& path, const TensorPtr<float>& t) {
    if (t->shape.size() != 3 || (t->shape[0] != 1 && t->shape[0] != 3))
        throw DimensionError("write_png: need [1|3,H,W], got " + format_shape(t->shape));
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed for '" + path + "'");
    }
    std::vector<png_byte> raw(static_cast<size_t>(h) * w * c);
    std::vector<png_bytep> rows(h);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png write failed for '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                float v = t->data[(static_cast<size_t>(ch) * h + y) * w + x];
                v = std::min(1.0f, std::max(0.0f, v));
                raw[(static_cast<size_t>(y) * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0f));
            }
        rows[y] = raw.data() + static_cast<size_t>(y) * w * c;
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Raw pixel transforms (data path, not differentiated)

inline TensorPtr<float> bilinear_resize(const TensorPtr<float>& t, int oh, int ow) {
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    auto out = make_tensor<float>({c, oh, ow});
    const float sy = static_cast<float>(h) / oh, sx = static_cast<float>(w) / ow;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y) {
            const float fy = std::max(0.0f, (y + 0.5f) * sy - 0.5f);
            const int y0 = std::min(static_cast<int>(fy), h - 1), y1 = std::min(y0 + 1, h - 1);
            const float wy = fy - y0;
            for (int x = 0; x < ow; ++x) {
                const float fx = std::max(0.0f, (x + 0.5f) * sx - 0.5f);
                const int x0 = std::min(static_cast<int>(fx), w - 1), x1 = std::min(x0 + 1, w - 1);
                const float wx = fx - x0;
                auto at = [&](int yy, int xx) { return t->data[(static_cast<size_t>(ch) * h + yy) * w + xx]; };
                out->data[(static_cast<size_t>(ch) * oh + y) * ow + x] =
                    (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                    wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
            }
        }
    return out;
}

inline TensorPtr<float> reflect_pad(const TensorPtr<float>& t, int pad) {
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    auto out = make_tensor<float>({c, h + 2 * pad, w + 2 * pad});
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h + 2 * pad; ++y)
            for (int x = 0; x < w + 2 * pad; ++x)
                out->data[(static_cast<size_t>(ch) * (h + 2 * pad) + y) * (w + 2 * pad) + x] =
                    t->data[(static_cast<size_t>(ch) * h + reflect(y - pad, h)) * w + reflect(x - pad, w)];
    return out;
}

inline TensorPtr<float> crop(const TensorPtr<float>& t, int top, int left, int ch_, int cw) {
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    if (top < 0 || left < 0 || top + ch_ > h || left + cw > w)
        throw DimensionError("crop window outside image");
    auto out = make_tensor<float>({c, ch_, cw});
    for (int chn = 0; chn < c; ++chn)
        for (int y = 0; y < ch_; ++y)
            for (int x = 0; x < cw; ++x)
                out->data[(static_cast<size_t>(chn) * ch_ + y) * cw + x] =
                    t->data[(static_cast<size_t>(chn) * h + top + y) * w + left + x];
    return out;
}

// k*90deg counter-clockwise rotation of a square image; lossless permutation
template <typename T>
TensorPtr<T> rot90(const TensorPtr<T>& t, int k) {
    if (t->shape.size() != 3) throw DimensionError("rot90: need [C,H,W], got " + format_shape(t->shape));
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    if (h != w) throw ValidationError("rot90: image must be square, got " + format_shape(t->shape));
    k = ((k % 4) + 4) % 4;
    if (k == 0) {
        auto out = make_tensor<T>(t->shape);
        out->data = t->data;
        return out;
    }
    auto out = make_tensor<T>(t->shape);
    const int s = h;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                int sy = y, sx = x;
                // one CCW step: out(y,x) = in(x, s-1-y); applied k times
                for (int i = 0; i < k; ++i) {
                    const int ny = sx, nx = s - 1 - sy;
                    sy = ny, sx = nx;
                }
                out->data[(static_cast<size_t>(ch) * s + y) * s + x] =
                    t->data[(static_cast<size_t>(ch) * s + sy) * s + sx];
            }
    return out;
}

template <typename T>
TensorPtr<T> flip_horizontal(const TensorPtr<T>& t) {
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    auto out = make_tensor<T>(t->shape);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out->data[(static_cast<size_t>(ch) * h + y) * w + x] =
                    t->data[(static_cast<size_t>(ch) * h + y) * w + (w - 1 - x)];
    return out;
}

template <typename T>
TensorPtr<T> flip_vertical(const TensorPtr<T>& t) {
    const int c = t->shape[0], h = t->shape[1], w = t->shape[2];
    auto out = make_tensor<T>(t->shape);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out->data[(static_cast<size_t>(ch) * h + y) * w + x] =
                    t->data[(static_cast<size_t>(ch) * h + (h - 1 - y)) * w + x];
    return out;
}

}  // namespace hyperinit
