#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "rearlab/ar_model.hpp"
#include "rearlab/codebook.hpp"
#include "rearlab/rng.hpp"

namespace testutil {

template <typename T>
rear::CodebookT<T> random_codebook(int64_t K, int64_t c, uint64_t seed) {
    rear::Rng rng(seed);
    rear::CodebookT<T> cb(K, c);
    for (auto& v : cb.entries) v = static_cast<T>(rng.normal());
    return cb;
}

inline std::vector<uint16_t> random_tokens(int64_t n, int64_t K, uint64_t seed) {
    rear::Rng rng(seed);
    std::vector<uint16_t> out(static_cast<size_t>(n));
    for (auto& t : out) t = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(K)));
    return out;
}

// A generic point in parameter space: every parameter (gains, biases, adaLN)
// drawn from the same normal. Gradient checks use this so no path sits at a
// degenerate zero.
template <typename T>
void randomize_all_params(rear::ARModel<T>& model, uint64_t seed, double scale = 0.2) {
    rear::Rng rng(seed);
    for (rear::Param<T>* p : model.all_params()) {
        for (auto& v : p->w.data) v = static_cast<T>(rng.normal() * scale);
    }
}

// Central finite differences over every parameter of the model against the
// analytic gradients already accumulated in each param's .g. Reports the
// worst relative error. Independent of the backward implementation: only the
// scalar loss function is reused.
template <typename T>
double max_grad_rel_error(rear::ARModel<T>& model, const std::function<double()>& loss_fn,
                          T step) {
    double worst = 0.0;
    for (rear::Param<T>* p : model.all_params()) {
        for (int64_t i = 0; i < p->w.numel(); ++i) {
            const T saved = p->w.at(i);
            p->w.at(i) = saved + step;
            const double lp = loss_fn();
            p->w.at(i) = saved - step;
            const double lm = loss_fn();
            p->w.at(i) = saved;
            const double numeric = (lp - lm) / (2.0 * static_cast<double>(step));
            const double analytic = static_cast<double>(p->g.at(i));
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

}  // namespace testutil
