#include "rearlab/token_cache.hpp"

#include "rearlab/binary_io.hpp"
#include "rearlab/errors.hpp"

namespace rear {

void save_token_cache(const TokenCache& cache, const std::string& path) {
    ByteWriter w;
    w.raw("RLTC", 4);
    w.u32(TokenCache::kVersion);
    w.u32(cache.K);
    w.u32(cache.h);
    w.u32(cache.w);
    w.u32(cache.num_classes);
    w.u64(static_cast<uint64_t>(cache.count()));
    w.u64(cache.tokenizer_checksum);
    const int64_t n = cache.seq_len();
    for (int64_t i = 0; i < cache.count(); ++i) {
        w.u16(cache.labels[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < n; ++j) w.u16(cache.indices[static_cast<size_t>(i * n + j)]);
    }
    write_file(path, w.bytes);
}

TokenCache load_token_cache(const std::string& path, uint64_t expected_checksum) {
    const auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size());
    char magic[4];
    std::memcpy(magic, r.take(4), 4);
    if (std::memcmp(magic, "RLTC", 4) != 0)
        throw IntegrityError("token cache: bad magic in " + path);
    const uint32_t version = r.u32();
    if (version != TokenCache::kVersion)
        throw IntegrityError("token cache: unsupported version " + std::to_string(version));
    TokenCache cache;
    cache.K = r.u32();
    cache.h = r.u32();
    cache.w = r.u32();
    cache.num_classes = r.u32();
    const uint64_t count = r.u64();
    cache.tokenizer_checksum = r.u64();
    if (expected_checksum != 0 && cache.tokenizer_checksum != expected_checksum) {
        throw IntegrityError(
            "token cache: tokenizer checksum mismatch (cache was built by a different "
            "tokenizer checkpoint; re-run tokenize)");
    }
    const int64_t n = static_cast<int64_t>(cache.h) * cache.w;
    const size_t expect_bytes =
        static_cast<size_t>(TokenCache::kHeaderBytes) + count * (2 + 2 * static_cast<size_t>(n));
    if (bytes.size() != expect_bytes)
        throw IntegrityError("token cache: size mismatch (corrupt file) " + path);
    cache.labels.resize(count);
    cache.indices.resize(count * static_cast<size_t>(n));
    for (uint64_t i = 0; i < count; ++i) {
        cache.labels[i] = r.u16();
        for (int64_t j = 0; j < n; ++j) {
            const uint16_t t = r.u16();
            if (t >= cache.K) throw IntegrityError("token cache: index out of range");
            cache.indices[i * static_cast<size_t>(n) + static_cast<size_t>(j)] = t;
        }
    }
    return cache;
}

}  // namespace rear
