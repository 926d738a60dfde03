#include "histogen/core/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

#include "histogen/core/errors.hpp"

namespace histogen {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);

    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError("not a PNG file: " + path);
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB.
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);

    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open image for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    for (int y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

bool is_readable_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) return false;
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8) return false;
    return png_sig_cmp(sig, 0, 8) == 0;
}

Tensor<float> image_to_tensor(const ImageU8& img) {
    Tensor<float> t({3, img.height, img.width});
    const Index hw = static_cast<Index>(img.height) * img.width;
    for (Index p = 0; p < hw; ++p) {
        for (Index c = 0; c < 3; ++c) {
            t[c * hw + p] = static_cast<float>(img.rgb[static_cast<std::size_t>(p * 3 + c)]) / 127.5f - 1.0f;
        }
    }
    return t;
}

ImageU8 tensor_to_image(const Tensor<float>& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) {
        throw ShapeError("tensor_to_image expects (3,H,W), got " + chw.shape_str());
    }
    ImageU8 img;
    img.height = static_cast<int>(chw.dim(1));
    img.width = static_cast<int>(chw.dim(2));
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    const Index hw = static_cast<Index>(img.height) * img.width;
    for (Index p = 0; p < hw; ++p) {
        for (Index c = 0; c < 3; ++c) {
            float v = (chw[c * hw + p] + 1.0f) * 127.5f;
            v = std::min(255.0f, std::max(0.0f, std::round(v)));
            img.rgb[static_cast<std::size_t>(p * 3 + c)] = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

Tensor<float> load_image_batch(const std::vector<std::string>& paths) {
    if (paths.empty()) throw IoError("load_image_batch: empty path list");
    const ImageU8 first = read_png(paths[0]);
    Tensor<float> batch({static_cast<Index>(paths.size()), 3, first.height, first.width});
    const Index per = 3 * static_cast<Index>(first.height) * first.width;
    for (std::size_t b = 0; b < paths.size(); ++b) {
        const ImageU8 img = b == 0 ? first : read_png(paths[b]);
        if (img.width != first.width || img.height != first.height) {
            throw ShapeError("image size mismatch in batch: " + paths[b]);
        }
        const Tensor<float> t = image_to_tensor(img);
        std::memcpy(batch.data() + static_cast<Index>(b) * per, t.data(),
                    static_cast<std::size_t>(per) * sizeof(float));
    }
    return batch;
}

}  // namespace histogen
