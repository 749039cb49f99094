#include "rearlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "rearlab/binary_io.hpp"
#include "rearlab/errors.hpp"
#include "rearlab/image_io.hpp"
#include "rearlab/rng.hpp"

namespace fs = std::filesystem;

namespace rear {

DatasetSource dataset_source_from_string(const std::string& s) {
    if (s == "synthetic_shapes") return DatasetSource::SyntheticShapes;
    if (s == "image_folder") return DatasetSource::ImageFolder;
    if (s == "standard_32x32") return DatasetSource::Standard32x32;
    throw std::invalid_argument("unknown dataset source: " + s);
}

const char* dataset_source_to_string(DatasetSource s) {
    switch (s) {
        case DatasetSource::SyntheticShapes: return "synthetic_shapes";
        case DatasetSource::ImageFolder: return "image_folder";
        case DatasetSource::Standard32x32: return "standard_32x32";
    }
    return "?";
}

void DatasetConfig::validate() const {
    if (image_size < 4) throw std::invalid_argument("dataset: image_size too small");
    if (source == DatasetSource::SyntheticShapes) {
        if (num_classes < 1 || num_classes > 10)
            throw std::invalid_argument("dataset: synthetic shapes supports 1..10 classes");
        if (per_class < 1) throw std::invalid_argument("dataset: per_class must be >= 1");
    } else if (path.empty()) {
        throw std::invalid_argument("dataset: folder sources need a path");
    }
    if (!(split_frac > 0.0 && split_frac < 1.0))
        throw std::invalid_argument("dataset: split_frac must be in (0,1)");
}

ImageBatch Dataset::gather(const std::vector<int64_t>& indices) const {
    ImageBatch out(static_cast<int64_t>(indices.size()), image_size, image_size);
    const int64_t n = image_size * image_size * 3;
    for (size_t i = 0; i < indices.size(); ++i) {
        const float* src = images.data() + indices[i] * n;
        std::copy(src, src + n, out.data.data() + static_cast<int64_t>(i) * n);
    }
    return out;
}

ImageBatch Dataset::single(int64_t index) const { return gather({index}); }

std::vector<int64_t> Dataset::gather_labels(const std::vector<int64_t>& indices) const {
    std::vector<int64_t> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
    return out;
}

namespace {

struct ShapeParams {
    float cx, cy, r;
    float fg[3];
    float bg[3];
};

ShapeParams shape_params(int64_t size, uint64_t seed, int64_t index) {
    Rng rng(seed, RngStream::Init, 0x5afe, static_cast<uint64_t>(index));
    ShapeParams p;
    const float s = static_cast<float>(size);
    p.cx = s * 0.5f + static_cast<float>(rng.uniform(-0.125, 0.125)) * s;
    p.cy = s * 0.5f + static_cast<float>(rng.uniform(-0.125, 0.125)) * s;
    p.r = static_cast<float>(rng.uniform(0.20, 0.34)) * s;
    // saturated foreground, dim background
    const int hot = static_cast<int>(rng.below(3));
    for (int k = 0; k < 3; ++k) {
        p.fg[k] = static_cast<float>(rng.uniform(0.0, 0.45));
        p.bg[k] = static_cast<float>(rng.uniform(0.05, 0.35));
    }
    p.fg[hot] = static_cast<float>(rng.uniform(0.7, 1.0));
    return p;
}

bool inside_shape(int64_t cls, float dx, float dy, float r, int64_t x, int64_t y) {
    const float ax = std::abs(dx), ay = std::abs(dy);
    const float d2 = dx * dx + dy * dy;
    switch (cls) {
        case 0: return d2 <= r * r;                                    // circle
        case 1: return ax <= r * 0.85f && ay <= r * 0.85f;             // square
        case 2: return dy >= -r && dy <= r && ax <= (r - dy) * 0.5f;   // triangle
        case 3: return (ax <= r * 0.3f && ay <= r) || (ay <= r * 0.3f && ax <= r);  // plus
        case 4: return d2 <= r * r && d2 >= (0.55f * r) * (0.55f * r); // ring
        case 5: return ax + ay <= r;                                   // diamond
        case 6: return ay <= r && (y / 3) % 2 == 0;                    // h-stripes
        case 7: return ax <= r && (x / 3) % 2 == 0;                    // v-stripes
        case 8: return ax <= r && ay <= r && ((x / 4) + (y / 4)) % 2 == 0;  // checker
        case 9: return d2 <= r * r && std::abs(ax - ay) <= r * 0.25f;  // X
    }
    return false;
}

}  // namespace

void draw_synthetic_shape(float* dst, int64_t size, int64_t cls, uint64_t seed, int64_t index) {
    const ShapeParams p = shape_params(size, seed, index);
    Rng noise(seed, RngStream::Init, 0x7015e, static_cast<uint64_t>(index));
    for (int64_t y = 0; y < size; ++y) {
        for (int64_t x = 0; x < size; ++x) {
            const float dx = static_cast<float>(x) + 0.5f - p.cx;
            const float dy = static_cast<float>(y) + 0.5f - p.cy;
            const bool in = inside_shape(cls, dx, dy, p.r, x, y);
            float* px = dst + (y * size + x) * 3;
            for (int k = 0; k < 3; ++k) {
                float v = (in ? p.fg[k] : p.bg[k]) +
                          static_cast<float>(noise.uniform(-0.015, 0.015));
                px[k] = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }
}

namespace {

Dataset ingest_synthetic(const DatasetConfig& cfg) {
    Dataset ds;
    ds.image_size = cfg.image_size;
    ds.num_classes = cfg.num_classes;
    const int64_t count = cfg.num_classes * cfg.per_class;
    const int64_t n = cfg.image_size * cfg.image_size * 3;
    ds.images.resize(static_cast<size_t>(count * n));
    ds.labels.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const int64_t cls = i % cfg.num_classes;  // exactly uniform histogram
        ds.labels[static_cast<size_t>(i)] = cls;
        draw_synthetic_shape(ds.images.data() + i * n, cfg.image_size, cls, cfg.gen_seed, i);
    }
    return ds;
}

Dataset ingest_image_folder(const DatasetConfig& cfg) {
    Dataset ds;
    ds.image_size = cfg.image_size;
    if (!fs::is_directory(cfg.path)) throw IoError("dataset: not a directory: " + cfg.path);
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(cfg.path)) {
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty())
        throw IoError("dataset: no class subdirectories under " + cfg.path);
    ds.num_classes = static_cast<int64_t>(classes.size());
    const int64_t n = cfg.image_size * cfg.image_size * 3;
    for (size_t c = 0; c < classes.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(cfg.path) / classes[c])) {
            if (e.path().extension() == ".png") files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            RgbImage img = png_read_rgb8(f);
            if (img.W != cfg.image_size || img.H != cfg.image_size)
                img = resize_nearest(img, cfg.image_size, cfg.image_size);
            const size_t base = ds.images.size();
            ds.images.resize(base + static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i)
                ds.images[base + static_cast<size_t>(i)] =
                    static_cast<float>(img.rgb[static_cast<size_t>(i)]) / 255.0f;
            ds.labels.push_back(static_cast<int64_t>(c));
        }
    }
    if (ds.labels.empty()) throw IoError("dataset: no .png images under " + cfg.path);
    return ds;
}

Dataset ingest_standard32(const DatasetConfig& cfg) {
    Dataset ds;
    ds.image_size = cfg.image_size;
    ds.num_classes = 10;
    if (!fs::is_directory(cfg.path)) throw IoError("dataset: not a directory: " + cfg.path);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(cfg.path)) {
        if (e.path().extension() == ".bin") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("dataset: no .bin batches under " + cfg.path);
    const int64_t rec = 1 + 3 * 32 * 32;
    const int64_t n = cfg.image_size * cfg.image_size * 3;
    for (const auto& f : files) {
        const auto bytes = read_file(f);
        if (bytes.size() % static_cast<size_t>(rec) != 0)
            throw IntegrityError("dataset: bad record size in " + f);
        const int64_t m = static_cast<int64_t>(bytes.size()) / rec;
        for (int64_t i = 0; i < m; ++i) {
            const uint8_t* r = bytes.data() + i * rec;
            ds.labels.push_back(r[0]);
            // records are CHW; convert to HWC at 32x32 then resize if needed
            RgbImage img;
            img.W = 32;
            img.H = 32;
            img.rgb.resize(3 * 32 * 32);
            for (int64_t y = 0; y < 32; ++y)
                for (int64_t x = 0; x < 32; ++x)
                    for (int64_t k = 0; k < 3; ++k)
                        img.rgb[static_cast<size_t>((y * 32 + x) * 3 + k)] =
                            r[1 + k * 1024 + y * 32 + x];
            if (cfg.image_size != 32) img = resize_nearest(img, cfg.image_size, cfg.image_size);
            const size_t base = ds.images.size();
            ds.images.resize(base + static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j)
                ds.images[base + static_cast<size_t>(j)] =
                    static_cast<float>(img.rgb[static_cast<size_t>(j)]) / 255.0f;
        }
    }
    return ds;
}

}  // namespace

Dataset ingest_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    Dataset ds;
    switch (cfg.source) {
        case DatasetSource::SyntheticShapes: ds = ingest_synthetic(cfg); break;
        case DatasetSource::ImageFolder: ds = ingest_image_folder(cfg); break;
        case DatasetSource::Standard32x32: ds = ingest_standard32(cfg); break;
    }
    std::vector<int64_t> order(static_cast<size_t>(ds.count()));
    for (int64_t i = 0; i < ds.count(); ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(cfg.split_seed, RngStream::DataOrder, 0x5b117);
    rng.shuffle(order.begin(), order.end());
    const int64_t n_train = static_cast<int64_t>(
        std::floor(cfg.split_frac * static_cast<double>(ds.count())));
    ds.train_idx.assign(order.begin(), order.begin() + n_train);
    ds.val_idx.assign(order.begin() + n_train, order.end());
    return ds;
}

}  // namespace rear
