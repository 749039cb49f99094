#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rearlab/image_types.hpp"

namespace rear {

struct RgbImage {
    int64_t W = 0, H = 0;
    std::vector<uint8_t> rgb;  // [H,W,3]
};

// Minimal PNG codec on top of zlib: 8-bit RGB/RGBA, non-interlaced. Output is
// byte-deterministic for fixed input.
void png_write_rgb8(const std::string& path, const RgbImage& img);
RgbImage png_read_rgb8(const std::string& path);

// Row-major grid of the batch, `cols` images per row, optional padding pixels
// between cells (pad 0 keeps the pixel arithmetic exact).
RgbImage render_image_grid(const ImageBatch& images, int64_t cols, int64_t pad = 0);
void write_image_grid(const ImageBatch& images, const std::string& path, int64_t cols,
                      int64_t pad = 0);

RgbImage to_rgb8(const ImageBatch& images, int64_t index);
void copy_into_batch(const RgbImage& img, ImageBatch& batch, int64_t index);
RgbImage resize_nearest(const RgbImage& img, int64_t W, int64_t H);

}  // namespace rear
