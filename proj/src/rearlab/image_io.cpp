#include "rearlab/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "rearlab/binary_io.hpp"
#include "rearlab/errors.hpp"

namespace rear {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    in.seekg(0, std::ios::end);
    const auto n = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<uint8_t> bytes(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!in) throw IoError("short read: " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path);
}

namespace {

const uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

uint32_t get_be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void write_chunk(std::vector<uint8_t>& out, const char type[4],
                 const std::vector<uint8_t>& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> td(type, type + 4);
    td.insert(td.end(), data.begin(), data.end());
    out.insert(out.end(), td.begin(), td.end());
    put_be32(out, static_cast<uint32_t>(crc32(0L, td.data(), static_cast<uInt>(td.size()))));
}

uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

}  // namespace

void png_write_rgb8(const std::string& path, const RgbImage& img) {
    std::vector<uint8_t> out(kPngSig, kPngSig + 8);

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(img.W));
    put_be32(ihdr, static_cast<uint32_t>(img.H));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<uint8_t> raw(static_cast<size_t>(img.H * (1 + img.W * 3)));
    for (int64_t y = 0; y < img.H; ++y) {
        uint8_t* row = raw.data() + y * (1 + img.W * 3);
        row[0] = 0;
        std::memcpy(row + 1, img.rgb.data() + y * img.W * 3, static_cast<size_t>(img.W * 3));
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    idat.resize(bound);
    write_chunk(out, "IDAT", idat);
    write_chunk(out, "IEND", {});
    write_file(path, out);
}

RgbImage png_read_rgb8(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw IntegrityError("not a png file: " + path);

    int64_t W = 0, H = 0;
    int color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = get_be32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw IntegrityError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            W = get_be32(data);
            H = get_be32(data + 4);
            const int depth = data[8];
            color_type = data[9];
            if (depth != 8 || (color_type != 2 && color_type != 6) || data[12] != 0)
                throw IoError("png: unsupported format (need 8-bit RGB/RGBA, no interlace)");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (W <= 0 || H <= 0 || idat.empty()) throw IntegrityError("png: missing image data");

    const int64_t ch = color_type == 6 ? 4 : 3;
    const size_t raw_size = static_cast<size_t>(H * (1 + W * ch));
    std::vector<uint8_t> raw(raw_size);
    uLongf got = raw_size;
    const int rc = uncompress(raw.data(), &got, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || got != raw_size) throw IntegrityError("png: inflate failed");

    RgbImage img;
    img.W = W;
    img.H = H;
    img.rgb.assign(static_cast<size_t>(W * H * 3), 0);
    std::vector<uint8_t> prev(static_cast<size_t>(W * ch), 0);
    std::vector<uint8_t> cur(static_cast<size_t>(W * ch), 0);
    for (int64_t y = 0; y < H; ++y) {
        const uint8_t* row = raw.data() + y * (1 + W * ch);
        const uint8_t filter = row[0];
        const uint8_t* src = row + 1;
        for (int64_t i = 0; i < W * ch; ++i) {
            const int a = i >= ch ? cur[static_cast<size_t>(i - ch)] : 0;
            const int b = prev[static_cast<size_t>(i)];
            const int c = i >= ch ? prev[static_cast<size_t>(i - ch)] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IntegrityError("png: bad filter type");
            }
            cur[static_cast<size_t>(i)] = static_cast<uint8_t>(v & 0xff);
        }
        for (int64_t x = 0; x < W; ++x) {
            for (int64_t k = 0; k < 3; ++k) {
                img.rgb[static_cast<size_t>((y * W + x) * 3 + k)] =
                    cur[static_cast<size_t>(x * ch + k)];
            }
        }
        std::swap(prev, cur);
    }
    return img;
}

RgbImage to_rgb8(const ImageBatch& images, int64_t index) {
    RgbImage img;
    img.W = images.W;
    img.H = images.H;
    img.rgb.resize(static_cast<size_t>(images.W * images.H * 3));
    const float* src = images.data.data() + index * images.pixels_per_image();
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, src[i]));
        img.rgb[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

void copy_into_batch(const RgbImage& img, ImageBatch& batch, int64_t index) {
    if (img.W != batch.W || img.H != batch.H)
        throw std::invalid_argument("copy_into_batch: size mismatch");
    float* dst = batch.data.data() + index * batch.pixels_per_image();
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        dst[i] = static_cast<float>(img.rgb[i]) / 255.0f;
    }
}

RgbImage resize_nearest(const RgbImage& img, int64_t W, int64_t H) {
    RgbImage out;
    out.W = W;
    out.H = H;
    out.rgb.resize(static_cast<size_t>(W * H * 3));
    for (int64_t y = 0; y < H; ++y) {
        const int64_t sy = std::min(img.H - 1, y * img.H / H);
        for (int64_t x = 0; x < W; ++x) {
            const int64_t sx = std::min(img.W - 1, x * img.W / W);
            for (int64_t k = 0; k < 3; ++k) {
                out.rgb[static_cast<size_t>((y * W + x) * 3 + k)] =
                    img.rgb[static_cast<size_t>((sy * img.W + sx) * 3 + k)];
            }
        }
    }
    return out;
}

RgbImage render_image_grid(const ImageBatch& images, int64_t cols, int64_t pad) {
    if (cols < 1) throw std::invalid_argument("image grid: cols must be >= 1");
    const int64_t rows = (images.B + cols - 1) / cols;
    RgbImage grid;
    grid.W = cols * images.W + (cols - 1) * pad;
    grid.H = rows * images.H + (rows - 1) * pad;
    grid.rgb.assign(static_cast<size_t>(grid.W * grid.H * 3), 0);
    for (int64_t b = 0; b < images.B; ++b) {
        const RgbImage img = to_rgb8(images, b);
        const int64_t gy = (b / cols) * (images.H + pad);
        const int64_t gx = (b % cols) * (images.W + pad);
        for (int64_t y = 0; y < images.H; ++y) {
            std::memcpy(grid.rgb.data() + ((gy + y) * grid.W + gx) * 3,
                        img.rgb.data() + y * images.W * 3, static_cast<size_t>(images.W * 3));
        }
    }
    return grid;
}

void write_image_grid(const ImageBatch& images, const std::string& path, int64_t cols,
                      int64_t pad) {
    png_write_rgb8(path, render_image_grid(images, cols, pad));
}

}  // namespace rear
