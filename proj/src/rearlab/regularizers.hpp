#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rearlab/ar_model.hpp"
#include "rearlab/codebook.hpp"
#include "rearlab/math_util.hpp"
#include "rearlab/rng.hpp"

namespace rear {

enum class NoiseKind {
    Fixed,             // epsilon is the constant `level`
    UniformRange,      // epsilon ~ U(0, level)
    AnnealedLinear,    // epsilon ~ U(0, level * (1 - t))
    AnnealedTruncated, // epsilon ~ U(0, level * max(0, 1 - t/truncation))
};

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "fixed") return NoiseKind::Fixed;
    if (s == "uniform_range") return NoiseKind::UniformRange;
    if (s == "annealed_linear") return NoiseKind::AnnealedLinear;
    if (s == "annealed_truncated") return NoiseKind::AnnealedTruncated;
    throw std::invalid_argument("unknown noise schedule kind: " + s);
}

inline const char* noise_kind_to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::Fixed: return "fixed";
        case NoiseKind::UniformRange: return "uniform_range";
        case NoiseKind::AnnealedLinear: return "annealed_linear";
        case NoiseKind::AnnealedTruncated: return "annealed_truncated";
    }
    return "?";
}

// Annealing cap on the corruption level. The default truncated-linear shape
// reaches zero at t = truncation = 3/4, so f(3/8) = 1/2 under level = 1.
struct NoiseSchedule {
    NoiseKind kind = NoiseKind::AnnealedTruncated;
    double level = 1.0;       // max noise level (or the fixed epsilon)
    double truncation = 0.75; // t at which the truncated schedule hits zero

    // f(t): the maximum noise level at normalized progress t.
    double value(double t) const {
        if (!(t >= 0.0 && t <= 1.0))
            throw std::invalid_argument("schedule_value: t must be in [0,1]");
        switch (kind) {
            case NoiseKind::Fixed:
            case NoiseKind::UniformRange:
                return level;
            case NoiseKind::AnnealedLinear:
                return level * (1.0 - t);
            case NoiseKind::AnnealedTruncated:
                return level * std::max(0.0, 1.0 - t / truncation);
        }
        return 0.0;
    }

    void validate() const {
        if (!(level >= 0.0 && level <= 1.0))
            throw std::invalid_argument("noise schedule: level must be in [0,1]");
        if (!(truncation > 0.0 && truncation <= 1.0))
            throw std::invalid_argument("noise schedule: truncation must be in (0,1]");
    }
};

inline double schedule_value(const NoiseSchedule& s, double t) { return s.value(t); }

// One draw per token sequence.
inline double sample_epsilon(const NoiseSchedule& s, double t, Rng& rng) {
    const double cap = s.value(t);
    if (s.kind == NoiseKind::Fixed) return cap;
    return rng.uniform(0.0, cap);
}

// Outcome of corrupting one sequence; targets are always taken from the clean
// sequence, never from `noisy`.
struct CorruptionRecord {
    std::vector<uint16_t> noisy;
    std::vector<uint8_t> mask;       // b_i
    std::vector<uint16_t> draws;     // u_i where b_i = 1, else the original token
    double epsilon = 0.0;
};

// Each position is independently replaced with probability eps by a uniform
// draw over all K indices (the draw may reproduce the original token).
inline CorruptionRecord corrupt(const std::vector<uint16_t>& seq, double eps, int64_t K,
                                Rng& rng) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("corrupt: eps must be in [0,1]");
    CorruptionRecord rec;
    rec.epsilon = eps;
    rec.noisy = seq;
    rec.mask.assign(seq.size(), 0);
    rec.draws = seq;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (rng.bernoulli(eps)) {
            const auto u = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(K)));
            rec.mask[i] = 1;
            rec.draws[i] = u;
            rec.noisy[i] = u;
        }
    }
    return rec;
}

// Model input layout: slot 0 is the class position, slot p (p >= 1) carries
// sequence token p-1. The last sequence token is never an input.
inline std::vector<uint16_t> to_model_inputs(const std::vector<uint16_t>& seq, int64_t B,
                                             int64_t N) {
    std::vector<uint16_t> in(static_cast<size_t>(B * N), 0);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t p = 1; p < N; ++p) in[b * N + p] = seq[b * N + p - 1];
    }
    return in;
}

// Mean negative log-likelihood over all positions. targets[b*N+p] is the
// clean next token at position p. Optionally writes d(loss)/d(logits).
template <typename T>
double ar_loss(const Tensor<T>& logits, const std::vector<uint16_t>& targets,
               Tensor<T>* dlogits = nullptr) {
    const int64_t V = logits.shape.back();
    const int64_t R = logits.numel() / V;
    if (static_cast<int64_t>(targets.size()) != R)
        throw std::invalid_argument("ar_loss: target count mismatch");
    if (dlogits != nullptr) *dlogits = Tensor<T>(logits.shape);
    std::vector<T> logp(static_cast<size_t>(V));
    double loss = 0.0;
    const double inv_r = 1.0 / static_cast<double>(R);
    for (int64_t r = 0; r < R; ++r) {
        const T* row = logits.ptr() + r * V;
        log_softmax_row(row, logp.data(), V);
        const int64_t tgt = targets[static_cast<size_t>(r)];
        if (tgt >= V) throw std::invalid_argument("ar_loss: target out of range");
        if (!std::isfinite(static_cast<double>(row[0])))
            throw std::runtime_error("ar_loss: non-finite logits");
        loss -= static_cast<double>(logp[static_cast<size_t>(tgt)]);
        if (dlogits != nullptr) {
            T* drow = dlogits->ptr() + r * V;
            for (int64_t v = 0; v < V; ++v)
                drow[v] = static_cast<T>(std::exp(static_cast<double>(logp[v])) * inv_r);
            drow[tgt] -= static_cast<T>(inv_r);
        }
    }
    return loss * inv_r;
}

// Cosine-distance gradient w.r.t. the prediction a; the target b is frozen.
template <typename T>
void cosine_distance_grad(const T* a, const T* b, int64_t n, double upstream, T* da_accum) {
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na2 += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb2 += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double D = na * nb + kCosineEps;
    const double na_safe = std::max(na, 1e-30);
    for (int64_t i = 0; i < n; ++i) {
        const double ds = static_cast<double>(b[i]) / D -
                          dot * nb * static_cast<double>(a[i]) / (na_safe * D * D);
        da_accum[i] += static_cast<T>(-upstream * ds);
    }
}

template <typename T>
struct RegResult {
    double loss = 0.0;                  // unweighted mean regularization loss
    std::map<int64_t, Tensor<T>> dtaps; // lambda-scaled feature gradients
};

// Codebook-embedding regularization: projected shallow features recover the
// clean current token's embedding, projected deep features predict the clean
// next token's embedding. Positions 1..N-1; cosine distance; targets looked
// up from the clean sequence; no gradient reaches the codebook.
template <typename T>
RegResult<T> embedding_reg_loss(ARModel<T>& model, const ForwardOutput<T>& out,
                                const std::vector<uint16_t>& clean_seq, int64_t B,
                                const CodebookT<T>& cb, double lambda, bool with_grad) {
    const ARConfig& cfg = model.cfg;
    const int64_t N = out.tapped.begin()->second->dim(1);
    const int64_t H = cfg.hidden_dim;
    const int64_t C = cb.c;
    if (cb.c != cfg.codebook_dim) throw std::invalid_argument("reg: codebook dim mismatch");
    const int64_t P = N - 1;  // regularized positions per sequence
    if (P < 1) throw std::invalid_argument("reg: need at least 2 positions");

    RegResult<T> res;
    const double inv = 1.0 / static_cast<double>(B * P);

    struct TapSpec {
        int64_t layer;
        bool deep;
    };
    const TapSpec specs[2] = {{cfg.tap_shallow, false}, {cfg.tap_deep, true}};

    for (const TapSpec& spec : specs) {
        const Tensor<T>& feats = *out.tapped.at(spec.layer);
        // gather positions 1..N-1
        Tensor<T> f({B * P, H});
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t p = 1; p < N; ++p) {
                const T* src = feats.ptr() + (b * N + p) * H;
                std::copy(src, src + H, f.ptr() + (b * P + (p - 1)) * H);
            }
        }
        auto& head = spec.deep ? model.proj_deep : model.proj_shallow;
        Tensor<T> hidden_pre, pred;
        model.project(f, head, hidden_pre, pred);

        Tensor<T> targets({B * P, C});
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t p = 1; p < N; ++p) {
                // shallow: current token x_p (clean_seq[p-1]); deep: next token x_{p+1}
                const uint16_t tok = clean_seq[b * N + (spec.deep ? p : p - 1)];
                const T* e = cb.entry(tok);
                std::copy(e, e + C, targets.ptr() + (b * P + (p - 1)) * C);
            }
        }

        Tensor<T> dpred;
        if (with_grad) dpred = Tensor<T>({B * P, C});
        for (int64_t r = 0; r < B * P; ++r) {
            res.loss += inv * cosine_distance(pred.ptr() + r * C, targets.ptr() + r * C, C);
            if (with_grad) {
                cosine_distance_grad(pred.ptr() + r * C, targets.ptr() + r * C, C, lambda * inv,
                                     dpred.ptr() + r * C);
            }
        }

        if (with_grad) {
            Tensor<T> df;
            model.project_backward(f, hidden_pre, dpred, head, df);
            // scatter back to [B,N,H]
            auto [it, fresh] = res.dtaps.try_emplace(spec.layer, Tensor<T>({B, N, H}));
            Tensor<T>& dtap = it->second;
            (void)fresh;
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t p = 1; p < N; ++p) {
                    const T* src = df.ptr() + (b * P + (p - 1)) * H;
                    T* dst = dtap.ptr() + (b * N + p) * H;
                    for (int64_t j = 0; j < H; ++j) dst[j] += src[j];
                }
            }
        }
    }
    return res;
}

inline double total_loss(double ar, double reg, double lambda) { return ar + lambda * reg; }

}  // namespace rear
