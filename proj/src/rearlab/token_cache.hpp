#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rear {

// Pre-tokenized dataset bound to the producing tokenizer by checksum.
// Layout (little-endian): magic "RLTC", version u32, K u32, h u32, w u32,
// num_classes u32, count u64, tokenizer checksum u64, then per image a u16
// label and h*w u16 indices. Total size is exactly
// header(40) + count * (2 + 2*h*w) bytes.
struct TokenCache {
    static constexpr uint32_t kVersion = 1;
    static constexpr int64_t kHeaderBytes = 40;

    uint32_t K = 0;
    uint32_t h = 0;
    uint32_t w = 0;
    uint32_t num_classes = 0;
    uint64_t tokenizer_checksum = 0;
    std::vector<uint16_t> labels;   // [count]
    std::vector<uint16_t> indices;  // [count, h*w]

    int64_t count() const { return static_cast<int64_t>(labels.size()); }
    int64_t seq_len() const { return static_cast<int64_t>(h) * w; }
    const uint16_t* seq(int64_t i) const { return indices.data() + i * seq_len(); }

    int64_t file_size() const { return kHeaderBytes + count() * (2 + 2 * seq_len()); }
};

void save_token_cache(const TokenCache& cache, const std::string& path);

// Loads and validates; if expected_checksum is nonzero it must match the
// header or the load is refused.
TokenCache load_token_cache(const std::string& path, uint64_t expected_checksum = 0);

}  // namespace rear
