#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rear {

// Versioned binary container: a JSON metadata blob plus named typed arrays,
// closed by a CRC32 over everything before it. Round trips are bit-exact.
struct CheckpointContainer {
    static constexpr uint32_t kVersion = 1;

    enum class DType : uint8_t { F32 = 0, F64 = 1, U16 = 2, I64 = 3, U8 = 4 };

    struct Array {
        std::string name;
        DType dtype = DType::F32;
        std::vector<int64_t> dims;
        std::vector<uint8_t> raw;

        int64_t numel() const {
            int64_t n = 1;
            for (int64_t d : dims) n *= d;
            return n;
        }
    };

    std::string meta_json;
    std::vector<Array> arrays;

    void add_f32(const std::string& name, const float* data, std::vector<int64_t> dims);
    void add_f32(const std::string& name, const std::vector<float>& v) {
        add_f32(name, v.data(), {static_cast<int64_t>(v.size())});
    }
    void add_u16(const std::string& name, const std::vector<uint16_t>& v);
    void add_i64(const std::string& name, const std::vector<int64_t>& v);

    const Array* find(const std::string& name) const;
    const Array& require(const std::string& name) const;
    std::vector<float> get_f32(const std::string& name) const;
    std::vector<uint16_t> get_u16(const std::string& name) const;
    std::vector<int64_t> get_i64(const std::string& name) const;
};

void save_checkpoint(const CheckpointContainer& c, const std::string& path);
CheckpointContainer load_checkpoint(const std::string& path);

}  // namespace rear
