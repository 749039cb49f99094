#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rearlab/math_util.hpp"
#include "rearlab/tensor.hpp"

namespace rear {

// The quantizer's embedding table: K entries of dimension c. Frozen during AR
// training; AR-side code only ever reads it.
template <typename T>
struct CodebookT {
    int64_t K = 0;
    int64_t c = 0;
    std::vector<T> entries;  // [K, c] row-major

    CodebookT() = default;
    CodebookT(int64_t K_, int64_t c_) : K(K_), c(c_), entries(static_cast<size_t>(K_ * c_), T(0)) {
        if (K_ < 2) throw std::invalid_argument("codebook: K must be >= 2");
    }

    const T* entry(int64_t k) const { return entries.data() + k * c; }
    T* entry(int64_t k) { return entries.data() + k * c; }

    template <typename U>
    CodebookT<U> cast() const {
        CodebookT<U> out(K, c);
        for (size_t i = 0; i < entries.size(); ++i) out.entries[i] = static_cast<U>(entries[i]);
        return out;
    }
};

using Codebook = CodebookT<float>;

// Nearest entry in L2; ties broken by lowest index (strict < keeps the first
// minimum).
template <typename T>
int64_t nearest_entry(const T* v, const CodebookT<T>& cb) {
    int64_t best = 0;
    double best_d = squared_l2_distance(v, cb.entry(0), cb.c);
    for (int64_t k = 1; k < cb.K; ++k) {
        const double d = squared_l2_distance(v, cb.entry(k), cb.c);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// The incorrect token whose embedding is most cosine-similar to the correct
// one. Ties broken by lowest index.
template <typename T>
int64_t nearest_incorrect(int64_t correct_index, const CodebookT<T>& cb) {
    if (cb.K < 2) throw std::invalid_argument("nearest_incorrect: K must be >= 2");
    if (correct_index < 0 || correct_index >= cb.K)
        throw std::invalid_argument("nearest_incorrect: index out of range");
    int64_t best = -1;
    double best_s = 0.0;
    for (int64_t k = 0; k < cb.K; ++k) {
        if (k == correct_index) continue;
        const double s = cosine_similarity(cb.entry(k), cb.entry(correct_index), cb.c);
        if (best < 0 || s > best_s) {
            best_s = s;
            best = k;
        }
    }
    return best;
}

// Gathers codebook rows for a token sequence: out[i] = entries[indices[i]].
template <typename T>
void lookup_embeddings(const std::vector<uint16_t>& indices, const CodebookT<T>& cb, T* out) {
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t k = indices[i];
        if (k >= cb.K) throw std::invalid_argument("lookup: token index out of range");
        const T* e = cb.entry(k);
        for (int64_t j = 0; j < cb.c; ++j) out[i * cb.c + j] = e[j];
    }
}

// Row-major rasterization of an h x w index grid, and its inverse. Both are
// trivial copies; they exist to pin the order in one place.
inline std::vector<uint16_t> rasterize(const std::vector<uint16_t>& grid, int64_t h, int64_t w) {
    if (static_cast<int64_t>(grid.size()) != h * w)
        throw std::invalid_argument("rasterize: grid size mismatch");
    return grid;  // grids are stored row-major already
}

inline std::vector<uint16_t> de_rasterize(const std::vector<uint16_t>& seq, int64_t h, int64_t w) {
    if (static_cast<int64_t>(seq.size()) != h * w)
        throw std::invalid_argument("de_rasterize: sequence size mismatch");
    return seq;
}

}  // namespace rear
