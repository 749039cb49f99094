#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rearlab/ar_model.hpp"

namespace rear {

// Free-running decoding configuration. Temperature is pinned to 1.0 and there
// is no top-k/top-p truncation: improvements must come from the model.
struct SampleConfig {
    double guidance_scale = 1.0;  // s >= 1
    double guidance_power = 1.0;  // p > 0
    bool constant_scale = false;  // use s at every step instead of power-cosine
    double temperature = 1.0;
    uint64_t seed = 0;

    void validate() const {
        if (!(guidance_scale >= 1.0))
            throw std::invalid_argument("sample: guidance_scale must be >= 1");
        if (!(guidance_power > 0.0))
            throw std::invalid_argument("sample: guidance_power must be > 0");
        if (temperature != 1.0)
            throw std::invalid_argument("sample: temperature is fixed at 1.0");
    }
};

// Power-cosine guidance schedule: 1 + (s-1) * (1 - cos(pi * ((i+1)/N)^p)) / 2.
// Non-decreasing in i and exactly s at the final step.
double cfg_scale_at(int64_t i, int64_t N, double s, double p);

// l = l_u + scale * (l_c - l_u), elementwise over V.
void guided_logits(const float* cond, const float* uncond, double scale, float* out, int64_t V);

// Draw one token from softmax(logits) at temperature 1 via inverse CDF.
uint16_t sample_token(const float* logits, int64_t V, double u);

// Batched free-running sampling with KV cache. One sequence per label entry;
// RNG stream is (seed, sequence index, step), so results are independent of
// batching. Guidance runs conditional and null-class branches in one batched
// forward when guidance_scale > 1.
std::vector<uint16_t> sample(const ARModel<float>& model, const std::vector<int64_t>& labels,
                             const SampleConfig& sc);

// Cache-free reference path: every step recomputes the full prefix. Identical
// draws and combination rule as sample().
std::vector<uint16_t> sample_nocache(const ARModel<float>& model,
                                     const std::vector<int64_t>& labels, const SampleConfig& sc);

// Per-step guided logits from both paths, for equivalence checking.
struct StepLogits {
    std::vector<float> cached;    // [N,V] guided logits per step
    std::vector<float> uncached;  // [N,V]
    std::vector<uint16_t> cached_tokens;
    std::vector<uint16_t> uncached_tokens;
};
StepLogits sample_both_paths(const ARModel<float>& model, int64_t label, const SampleConfig& sc);

// Decoding where positions in `forced` (0-based step indices, step t produces
// sequence token t+1) are copied from ground truth and the rest are sampled
// conditioned on the realized mixed prefix.
std::vector<uint16_t> decode_with_context_mask(const ARModel<float>& model,
                                               const std::vector<uint16_t>& gt_seq,
                                               const std::vector<bool>& forced, int64_t label,
                                               const SampleConfig& sc);

// Batched variant: gt [B,N], forced per sequence, one label per sequence.
std::vector<uint16_t> decode_with_context_mask_batch(const ARModel<float>& model,
                                                     const std::vector<uint16_t>& gt,
                                                     const std::vector<std::vector<bool>>& forced,
                                                     const std::vector<int64_t>& labels,
                                                     const SampleConfig& sc);

struct ThroughputReport {
    double images_per_sec_cached = 0.0;
    double images_per_sec_nocache = 0.0;
    double tokens_per_sec_cached = 0.0;
    double tokens_per_sec_nocache = 0.0;
    int64_t batch = 0;
    int64_t seq_len = 0;
    int64_t runs = 0;
    std::string hardware;
};

// Median over `runs` timed repetitions after one warmup pass each.
ThroughputReport throughput_report(const ARModel<float>& model, int64_t batch,
                                   const SampleConfig& sc, int64_t runs = 3);

std::string hardware_string();

}  // namespace rear
