#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace rear {

inline constexpr double kCosineEps = 1e-8;

// <a,b> / (|a||b| + eps). The eps keeps zero vectors well-defined.
template <typename T>
double cosine_similarity(const T* a, const T* b, int64_t n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + kCosineEps);
}

template <typename T>
double cosine_distance(const T* a, const T* b, int64_t n) {
    return 1.0 - cosine_similarity(a, b, n);
}

template <typename T>
double squared_l2_distance(const T* a, const T* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
    const T pdf = std::exp(-x * x / T(2)) / std::sqrt(T(2) * T(M_PI));
    return cdf + x * pdf;
}

template <typename T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
    const T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

// In-place softmax over row[0..n).
template <typename T>
void softmax_row(T* row, int64_t n) {
    T mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T sum = T(0);
    for (int64_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (int64_t i = 0; i < n; ++i) row[i] /= sum;
}

// log-softmax of row into out (may alias row).
template <typename T>
void log_softmax_row(const T* row, T* out, int64_t n) {
    T mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(row[i] - mx));
    const T lse = mx + static_cast<T>(std::log(sum));
    for (int64_t i = 0; i < n; ++i) out[i] = row[i] - lse;
}

}  // namespace rear
