#pragma once

#include <cstdint>
#include <vector>

#include "rearlab/ar_model.hpp"
#include "rearlab/regularizers.hpp"

namespace rear {

template <typename T>
struct ObjectiveResult {
    double ar = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

// The training objective for one batch: next-token NLL on the corrupted
// context plus lambda times the codebook-embedding regularizer, both against
// clean targets. Accumulates parameter gradients when with_grad is set.
template <typename T>
ObjectiveResult<T> compute_objective(ARModel<T>& model, const std::vector<uint16_t>& clean,
                                     const std::vector<uint16_t>& noisy,
                                     const std::vector<int64_t>& labels,
                                     const CodebookT<T>& codebook, double lambda,
                                     bool train_mode, uint64_t dropout_seed, bool with_grad,
                                     ForwardCache<T>* cache_out = nullptr) {
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const auto inputs = to_model_inputs(noisy, B, N);

    ForwardCache<T> local_cache;
    ForwardCache<T>& cache = cache_out != nullptr ? *cache_out : local_cache;
    const ForwardOutput<T> out = model.forward(inputs, labels, train_mode, cache, dropout_seed);

    ObjectiveResult<T> res;
    Tensor<T> dlogits;
    res.ar = ar_loss(cache.logits, clean, with_grad ? &dlogits : nullptr);

    std::map<int64_t, Tensor<T>> dtaps;
    if (lambda > 0.0) {
        RegResult<T> reg = embedding_reg_loss(model, out, clean, B, codebook, lambda, with_grad);
        res.reg = reg.loss;
        dtaps = std::move(reg.dtaps);
    }
    res.total = total_loss(res.ar, res.reg, lambda);

    if (with_grad) {
        model.backward(cache, dlogits, dtaps);
    }
    return res;
}

}  // namespace rear
