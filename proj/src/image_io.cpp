#include "forgesem/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "forgesem/common.hpp"

namespace forgesem {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

} // namespace

Tensor read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("png read init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("png info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("not a decodable png: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    // normalize every variant to 8-bit RGB
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::string& path, const Tensor& img) {
    FORGESEM_CHECK(img.rank() == 3 && img.dim(0) == 3, "write_png: need 3xHxW");
    const int h = img.dim(1), w = img.dim(2);

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw io_error("cannot create " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("png write init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("png info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + c] =
                    to_byte(img[(static_cast<std::size_t>(c) * h + y) * w + x]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_bin(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    char magic[4];
    std::uint32_t dims[3];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(dims), 12);
    if (!f || std::memcmp(magic, "FSEM", 4) != 0)
        throw io_error("bad raw image header: " + path);
    const int c = static_cast<int>(dims[0]), h = static_cast<int>(dims[1]),
              w = static_cast<int>(dims[2]);
    FORGESEM_CHECK(c >= 1 && h >= 1 && w >= 1 && c <= 16 && h <= 1 << 16 && w <= 1 << 16,
                   "raw image dims out of range");
    Tensor out({c, h, w});
    f.read(reinterpret_cast<char*>(out.data()),
           static_cast<std::streamsize>(out.numel() * sizeof(float)));
    if (!f) throw io_error("truncated raw image: " + path);
    return out;
}

void write_bin(const std::string& path, const Tensor& img) {
    FORGESEM_CHECK(img.rank() == 3, "write_bin: need CxHxW");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot create " + path);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.dim(0)),
                                   static_cast<std::uint32_t>(img.dim(1)),
                                   static_cast<std::uint32_t>(img.dim(2))};
    f.write("FSEM", 4);
    f.write(reinterpret_cast<const char*>(dims), 12);
    f.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.numel() * sizeof(float)));
    if (!f) throw io_error("short write: " + path);
}

Tensor read_image(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0)
        return read_bin(path);
    return read_png(path);
}

Tensor resize_bilinear_image(const Tensor& img, int out_h, int out_w) {
    FORGESEM_CHECK(img.rank() == 3, "resize: need CxHxW");
    FORGESEM_CHECK(out_h >= 1 && out_w >= 1, "resize: bad output size");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h == out_h && w == out_w) return img;

    auto taps = [](int in, int out, int i, int& i0, int& i1, float& w1) {
        const double scale = static_cast<double>(in) / out;
        double src = (i + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        i0 = static_cast<int>(src);
        i1 = std::min(i0 + 1, in - 1);
        w1 = static_cast<float>(src - i0);
    };

    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        const float* src = img.data() + static_cast<std::size_t>(ch) * h * w;
        float* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            int y0, y1;
            float wy;
            taps(h, out_h, y, y0, y1, wy);
            for (int x = 0; x < out_w; ++x) {
                int x0, x1;
                float wx;
                taps(w, out_w, x, x0, x1, wx);
                const float a = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
                const float b = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
                dst[y * out_w + x] = a * (1 - wy) + b * wy;
            }
        }
    }
    return out;
}

} // namespace forgesem
