#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rear {

// Dense row-major tensor over a flat buffer. The scalar type is a template
// parameter so the same model code runs in float for training and in double
// for finite-difference gradient checks.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& at(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// c[M,N] (+)= a[M,K] * b[K,N].
//
// The i-k-j loop order keeps the reduction over K in strictly ascending order
// for every output element, independent of M and N. Cached and cache-free
// decoding therefore produce bit-identical activations, and the j-innermost
// accumulation vectorizes without relaxing IEEE semantics.
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    if (!accumulate) {
        std::fill(c, c + M * N, T(0));
    }
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* crow = c + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

template <typename T>
void transpose(const T* a, T* at, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            at[j * rows + i] = a[i * cols + j];
        }
    }
}

// c[M,N] (+)= a[M,K] * b[N,K]^T, via an explicit transpose of b.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N, bool accumulate,
             std::vector<T>& scratch) {
    scratch.resize(static_cast<size_t>(K * N));
    transpose(b, scratch.data(), N, K);
    gemm(a, scratch.data(), c, M, K, N, accumulate);
}

// c[M,N] (+)= a[K,M]^T * b[K,N], via an explicit transpose of a.
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N, bool accumulate,
             std::vector<T>& scratch) {
    scratch.resize(static_cast<size_t>(M * K));
    transpose(a, scratch.data(), K, M);
    gemm(scratch.data(), b, c, M, K, N, accumulate);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

}  // namespace rear
