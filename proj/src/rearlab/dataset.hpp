#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rearlab/image_types.hpp"

namespace rear {

enum class DatasetSource {
    SyntheticShapes,  // label-dependent shapes, generated on demand
    ImageFolder,      // <path>/<class>/<image>.png
    Standard32x32,    // <path>/*.bin records of 1 label byte + 3*32*32 bytes
};

DatasetSource dataset_source_from_string(const std::string& s);
const char* dataset_source_to_string(DatasetSource s);

struct DatasetConfig {
    DatasetSource source = DatasetSource::SyntheticShapes;
    std::string path;           // folder sources
    int64_t image_size = 32;
    int64_t num_classes = 10;   // synthetic only
    int64_t per_class = 300;    // synthetic only
    uint64_t gen_seed = 0;      // synthetic image randomization
    uint64_t split_seed = 0;
    double split_frac = 0.9;

    void validate() const;
};

struct Dataset {
    int64_t image_size = 0;
    int64_t num_classes = 0;
    std::vector<float> images;  // [count, H, W, 3]
    std::vector<int64_t> labels;
    std::vector<int64_t> train_idx;
    std::vector<int64_t> val_idx;

    int64_t count() const { return static_cast<int64_t>(labels.size()); }
    ImageBatch gather(const std::vector<int64_t>& indices) const;
    ImageBatch single(int64_t index) const;
    std::vector<int64_t> gather_labels(const std::vector<int64_t>& indices) const;
};

// Deterministic ingestion: images normalized to [0,1] at the configured size,
// labels attached, train/val split fixed by the split seed.
Dataset ingest_dataset(const DatasetConfig& cfg);

// One synthetic image, pure in (seed, index, class).
void draw_synthetic_shape(float* dst, int64_t size, int64_t cls, uint64_t seed, int64_t index);

}  // namespace rear
