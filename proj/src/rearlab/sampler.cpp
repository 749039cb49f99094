#include "rearlab/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "rearlab/math_util.hpp"
#include "rearlab/rng.hpp"

namespace rear {

double cfg_scale_at(int64_t i, int64_t N, double s, double p) {
    const double frac = static_cast<double>(i + 1) / static_cast<double>(N);
    return 1.0 + (s - 1.0) * (1.0 - std::cos(M_PI * std::pow(frac, p))) / 2.0;
}

void guided_logits(const float* cond, const float* uncond, double scale, float* out, int64_t V) {
    if (scale == 1.0) {  // guidance neutrality: the conditional branch, untouched
        std::copy(cond, cond + V, out);
        return;
    }
    if (scale == 0.0) {
        std::copy(uncond, uncond + V, out);
        return;
    }
    for (int64_t v = 0; v < V; ++v) {
        out[v] = static_cast<float>(uncond[v] + scale * (cond[v] - uncond[v]));
    }
}

uint16_t sample_token(const float* logits, int64_t V, double u) {
    // softmax then inverse CDF, ascending index order
    float mx = logits[0];
    for (int64_t v = 1; v < V; ++v) mx = std::max(mx, logits[v]);
    double total = 0.0;
    for (int64_t v = 0; v < V; ++v) total += std::exp(static_cast<double>(logits[v] - mx));
    const double target = u * total;
    double acc = 0.0;
    for (int64_t v = 0; v < V; ++v) {
        acc += std::exp(static_cast<double>(logits[v] - mx));
        if (target < acc) return static_cast<uint16_t>(v);
    }
    return static_cast<uint16_t>(V - 1);
}

namespace {

struct GuidedStep {
    // Combines a [rows,V] logit block into per-sequence guided logits.
    static void combine(const Tensor<float>& logits, int64_t B, bool use_cfg, double scale,
                        std::vector<float>& out) {
        const int64_t V = logits.shape.back();
        out.resize(static_cast<size_t>(B * V));
        for (int64_t b = 0; b < B; ++b) {
            const float* cond = logits.ptr() + b * V;
            if (use_cfg) {
                const float* uncond = logits.ptr() + (B + b) * V;
                guided_logits(cond, uncond, scale, out.data() + b * V, V);
            } else {
                std::copy(cond, cond + V, out.data() + b * V);
            }
        }
    }
};

}  // namespace

std::vector<uint16_t> sample(const ARModel<float>& model, const std::vector<int64_t>& labels,
                             const SampleConfig& sc) {
    sc.validate();
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t V = model.cfg.vocab_size;
    const bool use_cfg = sc.guidance_scale > 1.0;

    std::vector<int64_t> kv_labels = labels;
    if (use_cfg) {
        kv_labels.insert(kv_labels.end(), static_cast<size_t>(B), model.cfg.null_class());
    }
    KvCache<float> kv = model.make_kv_cache(kv_labels);

    std::vector<uint16_t> out(static_cast<size_t>(B * N));
    std::vector<uint16_t> feed;
    std::vector<float> guided;
    for (int64_t t = 0; t < N; ++t) {
        const Tensor<float> logits = model.decode_step(kv, feed);
        const double scale =
            sc.constant_scale ? sc.guidance_scale
                              : cfg_scale_at(t, N, sc.guidance_scale, sc.guidance_power);
        GuidedStep::combine(logits, B, use_cfg, scale, guided);
        feed.assign(static_cast<size_t>(use_cfg ? 2 * B : B), 0);
        for (int64_t b = 0; b < B; ++b) {
            Rng rng(sc.seed, RngStream::Sampling, static_cast<uint64_t>(b),
                    static_cast<uint64_t>(t));
            const uint16_t tok = sample_token(guided.data() + b * V, V, rng.uniform());
            out[b * N + t] = tok;
            feed[static_cast<size_t>(b)] = tok;
            if (use_cfg) feed[static_cast<size_t>(B + b)] = tok;
        }
    }
    return out;
}

namespace {

// Shared implementation for the cache-free path; optionally records guided
// logits at every step.
std::vector<uint16_t> sample_nocache_impl(const ARModel<float>& model,
                                          const std::vector<int64_t>& labels,
                                          const SampleConfig& sc, std::vector<float>* step_logits) {
    sc.validate();
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t V = model.cfg.vocab_size;
    const bool use_cfg = sc.guidance_scale > 1.0;
    const int64_t rows = use_cfg ? 2 * B : B;

    std::vector<int64_t> fwd_labels = labels;
    if (use_cfg) {
        fwd_labels.insert(fwd_labels.end(), static_cast<size_t>(B), model.cfg.null_class());
    }

    std::vector<uint16_t> out(static_cast<size_t>(B * N));
    std::vector<float> guided;
    ForwardCache<float> cache;
    for (int64_t t = 0; t < N; ++t) {
        const int64_t P = t + 1;  // positions 0..t
        std::vector<uint16_t> in(static_cast<size_t>(rows * P), 0);
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t p = 1; p <= t; ++p) {
                in[b * P + p] = out[b * N + (p - 1)];
                if (use_cfg) in[(B + b) * P + p] = out[b * N + (p - 1)];
            }
        }
        model.forward(in, fwd_labels, false, cache, 0, P);
        // slice logits at position t
        Tensor<float> last({rows, V});
        for (int64_t r = 0; r < rows; ++r) {
            const float* src = cache.logits.ptr() + (r * P + t) * V;
            std::copy(src, src + V, last.ptr() + r * V);
        }
        const double scale =
            sc.constant_scale ? sc.guidance_scale
                              : cfg_scale_at(t, N, sc.guidance_scale, sc.guidance_power);
        GuidedStep::combine(last, B, use_cfg, scale, guided);
        if (step_logits != nullptr) {
            step_logits->insert(step_logits->end(), guided.begin(), guided.end());
        }
        for (int64_t b = 0; b < B; ++b) {
            Rng rng(sc.seed, RngStream::Sampling, static_cast<uint64_t>(b),
                    static_cast<uint64_t>(t));
            out[b * N + t] = sample_token(guided.data() + b * V, V, rng.uniform());
        }
    }
    return out;
}

}  // namespace

std::vector<uint16_t> sample_nocache(const ARModel<float>& model,
                                     const std::vector<int64_t>& labels, const SampleConfig& sc) {
    return sample_nocache_impl(model, labels, sc, nullptr);
}

StepLogits sample_both_paths(const ARModel<float>& model, int64_t label, const SampleConfig& sc) {
    StepLogits res;
    const int64_t N = model.cfg.seq_len;
    const int64_t V = model.cfg.vocab_size;
    const bool use_cfg = sc.guidance_scale > 1.0;
    const std::vector<int64_t> labels = {label};

    // cached path, recording guided logits
    {
        std::vector<int64_t> kv_labels = labels;
        if (use_cfg) kv_labels.push_back(model.cfg.null_class());
        KvCache<float> kv = model.make_kv_cache(kv_labels);
        std::vector<uint16_t> feed;
        std::vector<float> guided;
        res.cached_tokens.resize(static_cast<size_t>(N));
        for (int64_t t = 0; t < N; ++t) {
            const Tensor<float> logits = model.decode_step(kv, feed);
            const double scale =
                sc.constant_scale ? sc.guidance_scale
                                  : cfg_scale_at(t, N, sc.guidance_scale, sc.guidance_power);
            GuidedStep::combine(logits, 1, use_cfg, scale, guided);
            res.cached.insert(res.cached.end(), guided.begin(), guided.begin() + V);
            Rng rng(sc.seed, RngStream::Sampling, 0, static_cast<uint64_t>(t));
            const uint16_t tok = sample_token(guided.data(), V, rng.uniform());
            res.cached_tokens[static_cast<size_t>(t)] = tok;
            feed.assign(use_cfg ? 2 : 1, tok);
        }
    }
    res.uncached_tokens = sample_nocache_impl(model, labels, sc, &res.uncached);
    return res;
}

std::vector<uint16_t> decode_with_context_mask_batch(const ARModel<float>& model,
                                                     const std::vector<uint16_t>& gt,
                                                     const std::vector<std::vector<bool>>& forced,
                                                     const std::vector<int64_t>& labels,
                                                     const SampleConfig& sc) {
    sc.validate();
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t V = model.cfg.vocab_size;
    if (static_cast<int64_t>(gt.size()) != B * N)
        throw std::invalid_argument("decode_with_context_mask: gt size mismatch");
    if (static_cast<int64_t>(forced.size()) != B)
        throw std::invalid_argument("decode_with_context_mask: mask count mismatch");
    for (const auto& m : forced) {
        if (static_cast<int64_t>(m.size()) != N)
            throw std::invalid_argument("decode_with_context_mask: mask length mismatch");
    }
    const bool use_cfg = sc.guidance_scale > 1.0;

    std::vector<int64_t> kv_labels = labels;
    if (use_cfg) {
        kv_labels.insert(kv_labels.end(), static_cast<size_t>(B), model.cfg.null_class());
    }
    KvCache<float> kv = model.make_kv_cache(kv_labels);

    std::vector<uint16_t> out(static_cast<size_t>(B * N));
    std::vector<uint16_t> feed;
    std::vector<float> guided;
    for (int64_t t = 0; t < N; ++t) {
        const Tensor<float> logits = model.decode_step(kv, feed);
        const double scale =
            sc.constant_scale ? sc.guidance_scale
                              : cfg_scale_at(t, N, sc.guidance_scale, sc.guidance_power);
        GuidedStep::combine(logits, B, use_cfg, scale, guided);
        feed.assign(static_cast<size_t>(use_cfg ? 2 * B : B), 0);
        for (int64_t b = 0; b < B; ++b) {
            uint16_t tok;
            if (forced[static_cast<size_t>(b)][static_cast<size_t>(t)]) {
                tok = gt[b * N + t];
            } else {
                Rng rng(sc.seed, RngStream::Sampling, static_cast<uint64_t>(b),
                        static_cast<uint64_t>(t));
                tok = sample_token(guided.data() + b * V, V, rng.uniform());
            }
            out[b * N + t] = tok;
            feed[static_cast<size_t>(b)] = tok;
            if (use_cfg) feed[static_cast<size_t>(B + b)] = tok;
        }
    }
    return out;
}

std::vector<uint16_t> decode_with_context_mask(const ARModel<float>& model,
                                               const std::vector<uint16_t>& gt_seq,
                                               const std::vector<bool>& forced, int64_t label,
                                               const SampleConfig& sc) {
    return decode_with_context_mask_batch(model, gt_seq, {forced}, {label}, sc);
}

std::string hardware_string() {
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    std::string name = "unknown cpu";
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            if (pos != std::string::npos) name = line.substr(pos + 2);
            break;
        }
    }
    return name + " x" + std::to_string(std::thread::hardware_concurrency());
}

ThroughputReport throughput_report(const ARModel<float>& model, int64_t batch,
                                   const SampleConfig& sc, int64_t runs) {
    using clock = std::chrono::steady_clock;
    ThroughputReport rep;
    rep.batch = batch;
    rep.seq_len = model.cfg.seq_len;
    rep.runs = runs;
    rep.hardware = hardware_string();
    const std::vector<int64_t> labels(static_cast<size_t>(batch), 0);

    auto time_path = [&](bool cached) {
        std::vector<double> secs;
        // one warmup, then timed runs
        for (int64_t r = 0; r <= runs; ++r) {
            const auto t0 = clock::now();
            if (cached) {
                sample(model, labels, sc);
            } else {
                sample_nocache(model, labels, sc);
            }
            const auto t1 = clock::now();
            if (r > 0) secs.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        std::sort(secs.begin(), secs.end());
        return secs[secs.size() / 2];
    };

    const double cached_s = time_path(true);
    const double nocache_s = time_path(false);
    rep.images_per_sec_cached = static_cast<double>(batch) / cached_s;
    rep.images_per_sec_nocache = static_cast<double>(batch) / nocache_s;
    rep.tokens_per_sec_cached = rep.images_per_sec_cached * static_cast<double>(rep.seq_len);
    rep.tokens_per_sec_nocache = rep.images_per_sec_nocache * static_cast<double>(rep.seq_len);
    return rep;
}

}  // namespace rear
