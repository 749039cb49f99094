#include "rearlab/checkpoint.hpp"

#include <cstring>

#include <zlib.h>

#include "rearlab/binary_io.hpp"
#include "rearlab/errors.hpp"

namespace rear {

void CheckpointContainer::add_f32(const std::string& name, const float* data,
                                  std::vector<int64_t> dims) {
    Array a;
    a.name = name;
    a.dtype = DType::F32;
    a.dims = std::move(dims);
    a.raw.resize(static_cast<size_t>(a.numel()) * 4);
    std::memcpy(a.raw.data(), data, a.raw.size());
    arrays.push_back(std::move(a));
}

void CheckpointContainer::add_u16(const std::string& name, const std::vector<uint16_t>& v) {
    Array a;
    a.name = name;
    a.dtype = DType::U16;
    a.dims = {static_cast<int64_t>(v.size())};
    a.raw.resize(v.size() * 2);
    std::memcpy(a.raw.data(), v.data(), a.raw.size());
    arrays.push_back(std::move(a));
}

void CheckpointContainer::add_i64(const std::string& name, const std::vector<int64_t>& v) {
    Array a;
    a.name = name;
    a.dtype = DType::I64;
    a.dims = {static_cast<int64_t>(v.size())};
    a.raw.resize(v.size() * 8);
    std::memcpy(a.raw.data(), v.data(), a.raw.size());
    arrays.push_back(std::move(a));
}

const CheckpointContainer::Array* CheckpointContainer::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

const CheckpointContainer::Array& CheckpointContainer::require(const std::string& name) const {
    const Array* a = find(name);
    if (a == nullptr) throw IntegrityError("checkpoint: missing array " + name);
    return *a;
}

std::vector<float> CheckpointContainer::get_f32(const std::string& name) const {
    const Array& a = require(name);
    if (a.dtype != DType::F32) throw IntegrityError("checkpoint: dtype mismatch for " + name);
    std::vector<float> v(static_cast<size_t>(a.numel()));
    std::memcpy(v.data(), a.raw.data(), a.raw.size());
    return v;
}

std::vector<uint16_t> CheckpointContainer::get_u16(const std::string& name) const {
    const Array& a = require(name);
    if (a.dtype != DType::U16) throw IntegrityError("checkpoint: dtype mismatch for " + name);
    std::vector<uint16_t> v(static_cast<size_t>(a.numel()));
    std::memcpy(v.data(), a.raw.data(), a.raw.size());
    return v;
}

std::vector<int64_t> CheckpointContainer::get_i64(const std::string& name) const {
    const Array& a = require(name);
    if (a.dtype != DType::I64) throw IntegrityError("checkpoint: dtype mismatch for " + name);
    std::vector<int64_t> v(static_cast<size_t>(a.numel()));
    std::memcpy(v.data(), a.raw.data(), a.raw.size());
    return v;
}

namespace {

constexpr size_t kDtypeSize[5] = {4, 8, 2, 8, 1};

}  // namespace

void save_checkpoint(const CheckpointContainer& c, const std::string& path) {
    ByteWriter w;
    w.raw("RLCK", 4);
    w.u32(CheckpointContainer::kVersion);
    w.str(c.meta_json);
    w.u64(c.arrays.size());
    for (const auto& a : c.arrays) {
        w.str(a.name);
        w.u8(static_cast<uint8_t>(a.dtype));
        w.u32(static_cast<uint32_t>(a.dims.size()));
        for (int64_t d : a.dims) w.i64(d);
        if (a.raw.size() != static_cast<size_t>(a.numel()) * kDtypeSize[static_cast<int>(a.dtype)])
            throw std::invalid_argument("checkpoint: array byte size inconsistent: " + a.name);
        w.raw(a.raw.data(), a.raw.size());
    }
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size())));
    w.u32(crc);
    write_file(path, w.bytes);
}

CheckpointContainer load_checkpoint(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 12) throw IntegrityError("checkpoint: file too small: " + path);
    const uint32_t stored_crc =
        static_cast<uint32_t>(bytes[bytes.size() - 4]) << 0 |
        static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8 |
        static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16 |
        static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24;
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
    if (crc != stored_crc) throw IntegrityError("checkpoint: CRC mismatch (corrupt): " + path);

    ByteReader r(bytes.data(), bytes.size() - 4);
    char magic[4];
    std::memcpy(magic, r.take(4), 4);
    if (std::memcmp(magic, "RLCK", 4) != 0)
        throw IntegrityError("checkpoint: bad magic in " + path);
    const uint32_t version = r.u32();
    if (version != CheckpointContainer::kVersion)
        throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));

    CheckpointContainer c;
    c.meta_json = r.str();
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        CheckpointContainer::Array a;
        a.name = r.str();
        const uint8_t dt = r.u8();
        if (dt > 4) throw IntegrityError("checkpoint: bad dtype");
        a.dtype = static_cast<CheckpointContainer::DType>(dt);
        const uint32_t nd = r.u32();
        for (uint32_t d = 0; d < nd; ++d) a.dims.push_back(r.i64());
        const size_t nbytes = static_cast<size_t>(a.numel()) * kDtypeSize[dt];
        const uint8_t* p = r.take(nbytes);
        a.raw.assign(p, p + nbytes);
        c.arrays.push_back(std::move(a));
    }
    return c;
}

}  // namespace rear
