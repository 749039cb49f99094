#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace testutil {

// Wilson-Hilferty approximation of the chi-square 0.99 quantile; accurate to
// a fraction of a percent for df >= 10.
inline double chi2_quantile_99(int64_t df) {
    const double z = 2.3263478740408408;  // Phi^{-1}(0.99)
    const double k = static_cast<double>(df);
    const double a = 2.0 / (9.0 * k);
    const double t = 1.0 - a + z * std::sqrt(a);
    return k * t * t * t;
}

// Pearson chi-square statistic for observed counts vs a uniform expectation.
inline double chi2_uniform_stat(const std::vector<int64_t>& counts, double total) {
    const double expected = total / static_cast<double>(counts.size());
    double stat = 0.0;
    for (int64_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

}  // namespace testutil
