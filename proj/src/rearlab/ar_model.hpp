#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rearlab/ar_config.hpp"
#include "rearlab/codebook.hpp"
#include "rearlab/math_util.hpp"
#include "rearlab/rng.hpp"
#include "rearlab/tensor.hpp"

namespace rear {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> w;
    Tensor<T> g;

    void init(std::vector<int64_t> shape, std::string n) {
        name = std::move(n);
        w = Tensor<T>(shape);
        g = Tensor<T>(std::move(shape));
    }
};

// Per-sequence forward state kept for the backward pass.
template <typename T>
struct BlockCache {
    Tensor<T> h_in;       // [B,N,H] block input
    Tensor<T> xhat1, xhat2;
    Tensor<T> inv1, inv2; // [B,N]
    Tensor<T> mod;        // [B,6H]
    Tensor<T> qkv;        // [B,N,3H] pre-norm
    Tensor<T> qn, kn;     // [B,N,H] post qk-norm
    Tensor<T> probs;      // [B,heads,N,N] softmax, pre-dropout
    std::vector<uint8_t> attn_keep;
    Tensor<T> attv;       // [B,N,H]
    Tensor<T> attn_proj;  // [B,N,H]
    Tensor<T> h_mid;      // [B,N,H]
    Tensor<T> fc1;        // [B,N,M] pre-gelu
    Tensor<T> act;        // [B,N,M] post-gelu, pre-dropout
    std::vector<uint8_t> mlp_keep;
    Tensor<T> mlp_out;    // [B,N,H]
};

template <typename T>
struct ForwardCache {
    int64_t B = 0;
    int64_t N = 0;  // positions actually run (<= cfg.seq_len)
    bool train = false;
    std::vector<uint16_t> in_tokens;  // [B,N], slot 0 per row ignored (class position)
    std::vector<int64_t> labels;      // [B]
    Tensor<T> cond_raw, cond_silu;    // [B,H]
    Tensor<T> emb_table;              // tied mode only: [V,H]
    Tensor<T> h0;                     // [B,N,H]
    std::vector<BlockCache<T>> blocks;
    Tensor<T> h_final;                // [B,N,H]
    Tensor<T> xhatf;
    Tensor<T> invf;
    Tensor<T> modf;                   // [B,2H]
    Tensor<T> y;                      // [B,N,H] head input
    Tensor<T> tie_mid;                // tied mode: [B,N,C]
    Tensor<T> logits;                 // [B,N,V]
};

// View of a forward pass: logits plus the hidden states at the two configured
// tap layers (exactly {l, l'}).
template <typename T>
struct ForwardOutput {
    const Tensor<T>* logits = nullptr;
    std::map<int64_t, const Tensor<T>*> tapped;
};

// Incremental decoding state. Owns per-layer key/value history for one batch
// of sequences; never shared across concurrent decodes.
template <typename T>
struct KvCache {
    int64_t B = 0;
    int64_t pos = 0;
    std::vector<int64_t> labels;
    Tensor<T> cond_raw, cond_silu;
    std::vector<Tensor<T>> kn;  // per block [B,N,H]
    std::vector<Tensor<T>> v;   // per block [B,N,H]
    std::vector<Tensor<T>> mod; // per block [B,6H]
    Tensor<T> modf;             // [B,2H]
    Tensor<T> emb_table;        // tied mode
};

inline constexpr double kLnEps = 1e-5;
inline constexpr double kRmsEps = 1e-6;

// Decoder-only causal transformer with AdaLN class conditioning, QK-norm,
// learnable positional embeddings, and two tap layers feeding MLP projection
// heads into the codebook embedding space.
template <typename T>
class ARModel {
public:
    ARConfig cfg;

    Param<T> tok_emb;   // [V,H] (untied mode)
    Param<T> cls_emb;   // [num_classes+1,H]
    Param<T> pos_emb;   // [N,H]
    struct Block {
        Param<T> adaln_w, adaln_b;
        Param<T> qkv_w, qkv_b;
        Param<T> q_gain, k_gain;
        Param<T> attn_out_w, attn_out_b;
        Param<T> fc1_w, fc1_b, fc2_w, fc2_b;
    };
    std::vector<Block> blocks;
    Param<T> adaln_f_w, adaln_f_b;
    Param<T> head_w, head_b;          // untied mode
    Param<T> tie_in_w, tie_out_w;     // tied mode
    struct ProjHead {
        Param<T> w1, b1, w2, b2;
    };
    ProjHead proj_shallow, proj_deep;

    CodebookT<T> codebook;  // tied mode only; frozen, never receives gradient

    explicit ARModel(ARConfig config, const CodebookT<T>* cb = nullptr) : cfg(config) {
        cfg.validate();
        if (cfg.tied_codebook) {
            if (cb == nullptr) throw std::invalid_argument("ar: tied_codebook requires a codebook");
            if (cb->c != cfg.codebook_dim)
                throw std::invalid_argument("ar: codebook dim mismatch");
            if (cb->K != cfg.vocab_size)
                throw std::invalid_argument("ar: codebook size must equal vocab_size");
            codebook = *cb;
        }
        const int64_t H = cfg.hidden_dim, V = cfg.vocab_size, N = cfg.seq_len;
        const int64_t M = cfg.mlp_hidden(), hd = cfg.head_dim(), C = cfg.codebook_dim;
        const int64_t P = cfg.head_hidden;
        if (!cfg.tied_codebook) tok_emb.init({V, H}, "tok_emb");
        cls_emb.init({cfg.num_classes + 1, H}, "cls_emb");
        pos_emb.init({N, H}, "pos_emb");
        blocks.resize(cfg.num_layers);
        for (int64_t l = 0; l < cfg.num_layers; ++l) {
            auto tag = [&](const char* s) { return "block" + std::to_string(l) + "." + s; };
            auto& b = blocks[l];
            b.adaln_w.init({H, 6 * H}, tag("adaln_w"));
            b.adaln_b.init({6 * H}, tag("adaln_b"));
            b.qkv_w.init({H, 3 * H}, tag("qkv_w"));
            b.qkv_b.init({3 * H}, tag("qkv_b"));
            b.q_gain.init({hd}, tag("q_gain"));
            b.k_gain.init({hd}, tag("k_gain"));
            b.attn_out_w.init({H, H}, tag("attn_out_w"));
            b.attn_out_b.init({H}, tag("attn_out_b"));
            b.fc1_w.init({H, M}, tag("fc1_w"));
            b.fc1_b.init({M}, tag("fc1_b"));
            b.fc2_w.init({M, H}, tag("fc2_w"));
            b.fc2_b.init({H}, tag("fc2_b"));
        }
        adaln_f_w.init({H, 2 * H}, "adaln_f_w");
        adaln_f_b.init({2 * H}, "adaln_f_b");
        if (cfg.tied_codebook) {
            tie_in_w.init({C, H}, "tie_in_w");
            tie_out_w.init({H, C}, "tie_out_w");
        } else {
            head_w.init({H, V}, "head_w");
        }
        head_b.init({V}, "head_b");
        proj_shallow.w1.init({H, P}, "proj_shallow.w1");
        proj_shallow.b1.init({P}, "proj_shallow.b1");
        proj_shallow.w2.init({P, C}, "proj_shallow.w2");
        proj_shallow.b2.init({C}, "proj_shallow.b2");
        proj_deep.w1.init({H, P}, "proj_deep.w1");
        proj_deep.b1.init({P}, "proj_deep.b1");
        proj_deep.w2.init({P, C}, "proj_deep.w2");
        proj_deep.b2.init({C}, "proj_deep.b2");
        build_registry();
    }

    // The parameter registry stores pointers into this object, so the model is
    // pinned in place (held behind unique_ptr wherever it needs to move).
    ARModel(const ARModel&) = delete;
    ARModel& operator=(const ARModel&) = delete;
    ARModel(ARModel&&) = delete;

    const std::vector<Param<T>*>& all_params() const { return registry_; }
    std::vector<Param<T>*>& all_params() { return registry_; }

    std::vector<Param<T>*> proj_head_params() {
        return {&proj_shallow.w1, &proj_shallow.b1, &proj_shallow.w2, &proj_shallow.b2,
                &proj_deep.w1,    &proj_deep.b1,    &proj_deep.w2,    &proj_deep.b2};
    }

    struct ParamCounts {
        int64_t backbone = 0;
        int64_t proj_heads = 0;
        int64_t total = 0;
    };
    ParamCounts count_parameters() const {
        ParamCounts out;
        for (const Param<T>* p : registry_) {
            const bool head = p->name.rfind("proj_", 0) == 0;
            (head ? out.proj_heads : out.backbone) += p->w.numel();
        }
        out.total = out.backbone + out.proj_heads;
        return out;
    }

    // adaln_zero starts every block as an identity map (DiT-style); tests that
    // need full gradient flow pass adaln_zero = false.
    void init_params(uint64_t seed, bool adaln_zero = true) {
        Rng rng(seed, RngStream::Init);
        const T std_w = T(0.02);
        for (Param<T>* p : registry_) {
            for (auto& v : p->w.data) v = static_cast<T>(rng.normal()) * std_w;
        }
        for (auto& b : blocks) {
            b.q_gain.w.fill(T(1));
            b.k_gain.w.fill(T(1));
            b.qkv_b.w.zero();
            b.attn_out_b.w.zero();
            b.fc1_b.w.zero();
            b.fc2_b.w.zero();
            if (adaln_zero) {
                b.adaln_w.w.zero();
                b.adaln_b.w.zero();
            }
        }
        if (adaln_zero) {
            adaln_f_w.w.zero();
            adaln_f_b.w.zero();
        }
        head_b.w.zero();
        proj_shallow.b1.w.zero();
        proj_shallow.b2.w.zero();
        proj_deep.b1.w.zero();
        proj_deep.b2.w.zero();
    }

    void zero_grad() {
        for (Param<T>* p : registry_) p->g.zero();
    }

    // ------------------------------------------------------------------ forward

    // in_tokens[b*N + p] is the input token at position p (slot 0 is ignored:
    // position 0 always carries the class embedding). Every entry must lie in
    // [0, vocab_size); labels in [0, num_classes] where num_classes is the
    // null class.
    ForwardOutput<T> forward(const std::vector<uint16_t>& in_tokens,
                             const std::vector<int64_t>& labels, bool train_mode,
                             ForwardCache<T>& cache, uint64_t dropout_seed = 0,
                             int64_t positions = -1) const {
        const int64_t N = positions < 0 ? cfg.seq_len : positions;
        const int64_t B = static_cast<int64_t>(labels.size());
        if (N < 1 || N > cfg.seq_len) throw std::invalid_argument("forward: bad position count");
        if (static_cast<int64_t>(in_tokens.size()) != B * N)
            throw std::invalid_argument("forward: token buffer size mismatch");
        validate_inputs(in_tokens, labels);

        const int64_t H = cfg.hidden_dim, V = cfg.vocab_size, M = cfg.mlp_hidden();
        const int64_t nh = cfg.num_heads, hd = cfg.head_dim();
        const double p_drop = train_mode ? cfg.dropout_rate : 0.0;

        cache.B = B;
        cache.N = N;
        cache.train = train_mode;
        cache.in_tokens = in_tokens;
        cache.labels = labels;
        cache.cond_raw = Tensor<T>({B, H});
        cache.cond_silu = Tensor<T>({B, H});
        cache.h0 = Tensor<T>({B, N, H});
        cache.blocks.assign(cfg.num_layers, BlockCache<T>());

        if (cfg.tied_codebook) build_emb_table(cache.emb_table);

        for (int64_t b = 0; b < B; ++b) {
            const T* ce = cls_emb.w.ptr() + labels[b] * H;
            for (int64_t j = 0; j < H; ++j) {
                cache.cond_raw.at(b, j) = ce[j];
                cache.cond_silu.at(b, j) = silu(ce[j]);
            }
            for (int64_t p = 0; p < N; ++p) {
                T* h = &cache.h0.at(b, p, 0);
                const T* pe = pos_emb.w.ptr() + p * H;
                if (p == 0) {
                    for (int64_t j = 0; j < H; ++j) h[j] = ce[j] + pe[j];
                } else {
                    const T* te = cfg.tied_codebook
                                      ? cache.emb_table.ptr() + in_tokens[b * N + p] * H
                                      : tok_emb.w.ptr() + in_tokens[b * N + p] * H;
                    for (int64_t j = 0; j < H; ++j) h[j] = te[j] + pe[j];
                }
            }
        }

        Tensor<T> h = cache.h0;
        for (int64_t l = 0; l < cfg.num_layers; ++l) {
            auto& bc = cache.blocks[l];
            const auto& bp = blocks[l];
            bc.h_in = h;
            bc.mod = Tensor<T>({B, 6 * H});
            gemm(cache.cond_silu.ptr(), bp.adaln_w.w.ptr(), bc.mod.ptr(), B, H, 6 * H, false);
            add_bias(bc.mod.ptr(), bp.adaln_b.w.ptr(), B, 6 * H);

            layer_norm(bc.h_in, bc.xhat1, bc.inv1);
            Tensor<T> a_in({B, N, H});
            modulate(bc.xhat1, bc.mod, 0, a_in);

            bc.qkv = Tensor<T>({B, N, 3 * H});
            gemm(a_in.ptr(), bp.qkv_w.w.ptr(), bc.qkv.ptr(), B * N, H, 3 * H, false);
            add_bias(bc.qkv.ptr(), bp.qkv_b.w.ptr(), B * N, 3 * H);

            bc.qn = Tensor<T>({B, N, H});
            bc.kn = Tensor<T>({B, N, H});
            for (int64_t bn = 0; bn < B * N; ++bn) {
                for (int64_t hh = 0; hh < nh; ++hh) {
                    rms_norm(&bc.qkv.ptr()[bn * 3 * H + hh * hd], bp.q_gain.w.ptr(),
                             &bc.qn.ptr()[bn * H + hh * hd], hd);
                    rms_norm(&bc.qkv.ptr()[bn * 3 * H + H + hh * hd], bp.k_gain.w.ptr(),
                             &bc.kn.ptr()[bn * H + hh * hd], hd);
                }
            }

            bc.probs = Tensor<T>({B, nh, N, N});
            bc.attv = Tensor<T>({B, N, H});
            const bool drop = p_drop > 0.0;
            if (drop) bc.attn_keep.assign(static_cast<size_t>(B * nh * N * N), 1);
            const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));
            Rng drop_rng(dropout_seed, RngStream::Dropout, static_cast<uint64_t>(l), 0);
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t hh = 0; hh < nh; ++hh) {
                    for (int64_t i = 0; i < N; ++i) {
                        T* prow = &bc.probs.ptr()[((b * nh + hh) * N + i) * N];
                        const T* qi = &bc.qn.ptr()[(b * N + i) * H + hh * hd];
                        for (int64_t j = 0; j <= i; ++j) {
                            const T* kj = &bc.kn.ptr()[(b * N + j) * H + hh * hd];
                            T s = T(0);
                            for (int64_t d = 0; d < hd; ++d) s += qi[d] * kj[d];
                            prow[j] = s * inv_sqrt_hd;
                        }
                        softmax_row(prow, i + 1);
                        const T* vbase = &bc.qkv.ptr()[0];
                        T* orow = &bc.attv.ptr()[(b * N + i) * H + hh * hd];
                        std::fill(orow, orow + hd, T(0));
                        for (int64_t j = 0; j <= i; ++j) {
                            T pij = prow[j];
                            if (drop) {
                                uint8_t keep = drop_rng.bernoulli(p_drop) ? 0 : 1;
                                bc.attn_keep[static_cast<size_t>(((b * nh + hh) * N + i) * N + j)] =
                                    keep;
                                pij = keep ? pij / static_cast<T>(1.0 - p_drop) : T(0);
                            }
                            const T* vj = vbase + (b * N + j) * 3 * H + 2 * H + hh * hd;
                            for (int64_t d = 0; d < hd; ++d) orow[d] += pij * vj[d];
                        }
                    }
                }
            }

            bc.attn_proj = Tensor<T>({B, N, H});
            gemm(bc.attv.ptr(), bp.attn_out_w.w.ptr(), bc.attn_proj.ptr(), B * N, H, H, false);
            add_bias(bc.attn_proj.ptr(), bp.attn_out_b.w.ptr(), B * N, H);

            bc.h_mid = Tensor<T>({B, N, H});
            gated_residual(bc.h_in, bc.attn_proj, bc.mod, 2, bc.h_mid);

            layer_norm(bc.h_mid, bc.xhat2, bc.inv2);
            Tensor<T> m_in({B, N, H});
            modulate(bc.xhat2, bc.mod, 3, m_in);

            bc.fc1 = Tensor<T>({B, N, M});
            gemm(m_in.ptr(), bp.fc1_w.w.ptr(), bc.fc1.ptr(), B * N, H, M, false);
            add_bias(bc.fc1.ptr(), bp.fc1_b.w.ptr(), B * N, M);
            bc.act = Tensor<T>({B, N, M});
            for (int64_t i = 0; i < B * N * M; ++i) bc.act.ptr()[i] = gelu(bc.fc1.ptr()[i]);

            Tensor<T> dropped = bc.act;
            if (drop) {
                bc.mlp_keep.assign(static_cast<size_t>(B * N * M), 1);
                Rng mlp_rng(dropout_seed, RngStream::Dropout, static_cast<uint64_t>(l), 1);
                const T scale = T(1) / static_cast<T>(1.0 - p_drop);
                for (int64_t i = 0; i < B * N * M; ++i) {
                    if (mlp_rng.bernoulli(p_drop)) {
                        bc.mlp_keep[static_cast<size_t>(i)] = 0;
                        dropped.ptr()[i] = T(0);
                    } else {
                        dropped.ptr()[i] *= scale;
                    }
                }
            }

            bc.mlp_out = Tensor<T>({B, N, H});
            gemm(dropped.ptr(), bp.fc2_w.w.ptr(), bc.mlp_out.ptr(), B * N, M, H, false);
            add_bias(bc.mlp_out.ptr(), bp.fc2_b.w.ptr(), B * N, H);

            gated_residual(bc.h_mid, bc.mlp_out, bc.mod, 5, h);
        }

        cache.h_final = h;
        layer_norm(cache.h_final, cache.xhatf, cache.invf);
        cache.modf = Tensor<T>({B, 2 * H});
        gemm(cache.cond_silu.ptr(), adaln_f_w.w.ptr(), cache.modf.ptr(), B, H, 2 * H, false);
        add_bias(cache.modf.ptr(), adaln_f_b.w.ptr(), B, 2 * H);
        cache.y = Tensor<T>({B, N, H});
        modulate_final(cache.xhatf, cache.modf, cache.y);

        cache.logits = Tensor<T>({B, N, V});
        if (cfg.tied_codebook) {
            const int64_t C = cfg.codebook_dim;
            cache.tie_mid = Tensor<T>({B, N, C});
            gemm(cache.y.ptr(), tie_out_w.w.ptr(), cache.tie_mid.ptr(), B * N, H, C, false);
            std::vector<T> zt(static_cast<size_t>(C * V));
            transpose(codebook.entries.data(), zt.data(), V, C);
            gemm(cache.tie_mid.ptr(), zt.data(), cache.logits.ptr(), B * N, C, V, false);
        } else {
            gemm(cache.y.ptr(), head_w.w.ptr(), cache.logits.ptr(), B * N, H, V, false);
        }
        add_bias(cache.logits.ptr(), head_b.w.ptr(), B * N, V);

        ForwardOutput<T> out;
        out.logits = &cache.logits;
        out.tapped[cfg.tap_shallow] = tap_tensor(cache, cfg.tap_shallow);
        out.tapped[cfg.tap_deep] = tap_tensor(cache, cfg.tap_deep);
        return out;
    }

    // Hidden states after every block (index 0..L-1), for layer profiles.
    std::vector<const Tensor<T>*> all_layer_hidden(const ForwardCache<T>& cache) const {
        std::vector<const Tensor<T>*> out;
        for (int64_t l = 0; l + 1 < cfg.num_layers; ++l) out.push_back(&cache.blocks[l + 1].h_in);
        out.push_back(&cache.h_final);
        return out;
    }

    // ----------------------------------------------------------------- backward

    // dlogits: [B,N,V]; dtaps: gradient w.r.t. the tapped hidden states.
    // Accumulates into every parameter's .g.
    void backward(const ForwardCache<T>& cache, const Tensor<T>& dlogits,
                  const std::map<int64_t, Tensor<T>>& dtaps) {
        const int64_t B = cache.B, N = cache.N;
        const int64_t H = cfg.hidden_dim, V = cfg.vocab_size, M = cfg.mlp_hidden();
        const int64_t nh = cfg.num_heads, hd = cfg.head_dim();
        const double p_drop = cache.train ? cfg.dropout_rate : 0.0;
        std::vector<T> scratch;

        Tensor<T> dcond_silu({B, H});

        // head
        Tensor<T> dy({B, N, H});
        if (cfg.tied_codebook) {
            const int64_t C = cfg.codebook_dim;
            Tensor<T> dtie({B, N, C});
            gemm(dlogits.ptr(), codebook.entries.data(), dtie.ptr(), B * N, V, C, false);
            gemm_tn(cache.y.ptr(), dtie.ptr(), tie_out_w.g.ptr(), H, B * N, C, true, scratch);
            gemm_nt(dtie.ptr(), tie_out_w.w.ptr(), dy.ptr(), B * N, C, H, false, scratch);
        } else {
            gemm_tn(cache.y.ptr(), dlogits.ptr(), head_w.g.ptr(), H, B * N, V, true, scratch);
            gemm_nt(dlogits.ptr(), head_w.w.ptr(), dy.ptr(), B * N, V, H, false, scratch);
        }
        col_sum_add(dlogits.ptr(), head_b.g.ptr(), B * N, V);

        // final modulation + layer norm
        Tensor<T> dmodf({B, 2 * H});
        Tensor<T> dxhatf({B, N, H});
        for (int64_t b = 0; b < B; ++b) {
            const T* sc = &cache.modf.at(b, H);
            T* dsh = &dmodf.at(b, 0);
            T* dsc = &dmodf.at(b, H);
            for (int64_t p = 0; p < N; ++p) {
                for (int64_t j = 0; j < H; ++j) {
                    const T d = dy.at(b, p, j);
                    dxhatf.at(b, p, j) = d * (T(1) + sc[j]);
                    dsc[j] += d * cache.xhatf.at(b, p, j);
                    dsh[j] += d;
                }
            }
        }
        gemm_tn(cache.cond_silu.ptr(), dmodf.ptr(), adaln_f_w.g.ptr(), H, B, 2 * H, true, scratch);
        col_sum_add(dmodf.ptr(), adaln_f_b.g.ptr(), B, 2 * H);
        gemm_nt(dmodf.ptr(), adaln_f_w.w.ptr(), dcond_silu.ptr(), B, 2 * H, H, true, scratch);

        Tensor<T> dh({B, N, H});
        layer_norm_backward(dxhatf, cache.xhatf, cache.invf, dh, /*accumulate=*/false);

        // blocks in reverse
        for (int64_t l = cfg.num_layers - 1; l >= 0; --l) {
            const auto& bc = cache.blocks[l];
            auto& bp = blocks[l];
            if (!cfg.tap_pre_block) {
                auto it = dtaps.find(l);
                if (it != dtaps.end()) add_into(dh, it->second);
            }

            Tensor<T> dmod({B, 6 * H});

            // h = h_mid + gate2 * mlp_out
            Tensor<T> dmlp_out({B, N, H});
            gated_residual_backward(dh, bc.mlp_out, bc.mod, 5, dmlp_out, dmod);
            Tensor<T>& dh_mid = dh;  // residual passes through

            // mlp
            Tensor<T> dact({B, N, M});
            {
                Tensor<T> dropped = bc.act;
                apply_keep(dropped, bc.mlp_keep, p_drop);
                gemm_tn(dropped.ptr(), dmlp_out.ptr(), bp.fc2_w.g.ptr(), M, B * N, H, true,
                        scratch);
                col_sum_add(dmlp_out.ptr(), bp.fc2_b.g.ptr(), B * N, H);
                gemm_nt(dmlp_out.ptr(), bp.fc2_w.w.ptr(), dact.ptr(), B * N, H, M, false, scratch);
                apply_keep(dact, bc.mlp_keep, p_drop);
                for (int64_t i = 0; i < B * N * M; ++i)
                    dact.ptr()[i] *= gelu_grad(bc.fc1.ptr()[i]);
            }
            Tensor<T> m_in({B, N, H});
            modulate(bc.xhat2, bc.mod, 3, m_in);
            gemm_tn(m_in.ptr(), dact.ptr(), bp.fc1_w.g.ptr(), H, B * N, M, true, scratch);
            col_sum_add(dact.ptr(), bp.fc1_b.g.ptr(), B * N, M);
            Tensor<T> dm_in({B, N, H});
            gemm_nt(dact.ptr(), bp.fc1_w.w.ptr(), dm_in.ptr(), B * N, M, H, false, scratch);

            Tensor<T> dxhat2({B, N, H});
            modulate_backward(dm_in, bc.xhat2, bc.mod, 3, dxhat2, dmod);
            layer_norm_backward(dxhat2, bc.xhat2, bc.inv2, dh_mid, /*accumulate=*/true);

            // h_mid = h_in + gate1 * attn_proj
            Tensor<T> dattn_proj({B, N, H});
            gated_residual_backward(dh_mid, bc.attn_proj, bc.mod, 2, dattn_proj, dmod);
            Tensor<T>& dh_in = dh_mid;

            Tensor<T> dattv({B, N, H});
            gemm_tn(bc.attv.ptr(), dattn_proj.ptr(), bp.attn_out_w.g.ptr(), H, B * N, H, true,
                    scratch);
            col_sum_add(dattn_proj.ptr(), bp.attn_out_b.g.ptr(), B * N, H);
            gemm_nt(dattn_proj.ptr(), bp.attn_out_w.w.ptr(), dattv.ptr(), B * N, H, H, false,
                    scratch);

            // attention
            Tensor<T> dqn({B, N, H});
            Tensor<T> dkn({B, N, H});
            Tensor<T> dqkv({B, N, 3 * H});
            const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));
            std::vector<T> drow(static_cast<size_t>(N));
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t hh = 0; hh < nh; ++hh) {
                    for (int64_t i = 0; i < N; ++i) {
                        const T* prow = &bc.probs.ptr()[((b * nh + hh) * N + i) * N];
                        const T* doi = &dattv.ptr()[(b * N + i) * H + hh * hd];
                        // d(att_drop) then dP then dscore, row i
                        T dot_pp = T(0);
                        for (int64_t j = 0; j <= i; ++j) {
                            const T* vj =
                                &bc.qkv.ptr()[(b * N + j) * 3 * H + 2 * H + hh * hd];
                            T s = T(0);
                            for (int64_t d = 0; d < hd; ++d) s += doi[d] * vj[d];
                            T keep_scale = T(1);
                            if (p_drop > 0.0) {
                                const uint8_t keep = bc.attn_keep[static_cast<size_t>(
                                    ((b * nh + hh) * N + i) * N + j)];
                                keep_scale = keep ? T(1) / static_cast<T>(1.0 - p_drop) : T(0);
                                // dV via the dropped prob
                                const T pij = keep_scale * prow[j];
                                T* dvj = &dqkv.ptr()[(b * N + j) * 3 * H + 2 * H + hh * hd];
                                for (int64_t d = 0; d < hd; ++d) dvj[d] += pij * doi[d];
                            } else {
                                T* dvj = &dqkv.ptr()[(b * N + j) * 3 * H + 2 * H + hh * hd];
                                for (int64_t d = 0; d < hd; ++d) dvj[d] += prow[j] * doi[d];
                            }
                            drow[static_cast<size_t>(j)] = s * keep_scale;  // dP[i,j]
                            dot_pp += drow[static_cast<size_t>(j)] * prow[j];
                        }
                        const T* qi = &bc.qn.ptr()[(b * N + i) * H + hh * hd];
                        T* dqi = &dqn.ptr()[(b * N + i) * H + hh * hd];
                        for (int64_t j = 0; j <= i; ++j) {
                            const T ds = prow[j] * (drow[static_cast<size_t>(j)] - dot_pp) *
                                         inv_sqrt_hd;
                            const T* kj = &bc.kn.ptr()[(b * N + j) * H + hh * hd];
                            T* dkj = &dkn.ptr()[(b * N + j) * H + hh * hd];
                            for (int64_t d = 0; d < hd; ++d) {
                                dqi[d] += ds * kj[d];
                                dkj[d] += ds * qi[d];
                            }
                        }
                    }
                }
            }

            // qk-norm backward into dqkv
            for (int64_t bn = 0; bn < B * N; ++bn) {
                for (int64_t hh = 0; hh < nh; ++hh) {
                    rms_norm_backward(&bc.qkv.ptr()[bn * 3 * H + hh * hd], bp.q_gain.w.ptr(),
                                      &dqn.ptr()[bn * H + hh * hd],
                                      &dqkv.ptr()[bn * 3 * H + hh * hd], bp.q_gain.g.ptr(), hd);
                    rms_norm_backward(&bc.qkv.ptr()[bn * 3 * H + H + hh * hd], bp.k_gain.w.ptr(),
                                      &dkn.ptr()[bn * H + hh * hd],
                                      &dqkv.ptr()[bn * 3 * H + H + hh * hd], bp.k_gain.g.ptr(),
                                      hd);
                }
            }

            Tensor<T> a_in({B, N, H});
            modulate(bc.xhat1, bc.mod, 0, a_in);
            gemm_tn(a_in.ptr(), dqkv.ptr(), bp.qkv_w.g.ptr(), H, B * N, 3 * H, true, scratch);
            col_sum_add(dqkv.ptr(), bp.qkv_b.g.ptr(), B * N, 3 * H);
            Tensor<T> da_in({B, N, H});
            gemm_nt(dqkv.ptr(), bp.qkv_w.w.ptr(), da_in.ptr(), B * N, 3 * H, H, false, scratch);

            Tensor<T> dxhat1({B, N, H});
            modulate_backward(da_in, bc.xhat1, bc.mod, 0, dxhat1, dmod);
            layer_norm_backward(dxhat1, bc.xhat1, bc.inv1, dh_in, /*accumulate=*/true);

            gemm_tn(cache.cond_silu.ptr(), dmod.ptr(), bp.adaln_w.g.ptr(), H, B, 6 * H, true,
                    scratch);
            col_sum_add(dmod.ptr(), bp.adaln_b.g.ptr(), B, 6 * H);
            gemm_nt(dmod.ptr(), bp.adaln_w.w.ptr(), dcond_silu.ptr(), B, 6 * H, H, true, scratch);

            if (cfg.tap_pre_block) {
                auto it = dtaps.find(l);
                if (it != dtaps.end()) add_into(dh, it->second);
            }
        }

        // embeddings
        Tensor<T> demb_table;
        if (cfg.tied_codebook) demb_table = Tensor<T>({V, H});
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t p = 0; p < N; ++p) {
                const T* d = &dh.at(b, p, 0);
                T* pe = pos_emb.g.ptr() + p * H;
                for (int64_t j = 0; j < H; ++j) pe[j] += d[j];
                if (p == 0) {
                    T* ce = cls_emb.g.ptr() + cache.labels[b] * H;
                    for (int64_t j = 0; j < H; ++j) ce[j] += d[j];
                } else {
                    T* te = (cfg.tied_codebook ? demb_table.ptr() : tok_emb.g.ptr()) +
                            cache.in_tokens[b * N + p] * H;
                    for (int64_t j = 0; j < H; ++j) te[j] += d[j];
                }
            }
        }
        if (cfg.tied_codebook) {
            gemm_tn(codebook.entries.data(), demb_table.ptr(), tie_in_w.g.ptr(), cfg.codebook_dim,
                    V, H, true, scratch);
        }

        // conditioning chain: silu then class embedding rows
        for (int64_t b = 0; b < B; ++b) {
            T* ce = cls_emb.g.ptr() + cache.labels[b] * H;
            for (int64_t j = 0; j < H; ++j) {
                ce[j] += dcond_silu.at(b, j) * silu_grad(cache.cond_raw.at(b, j));
            }
        }
    }

    // --------------------------------------------------------------- projection

    // Positionwise two-layer GeLU MLP into the codebook embedding space.
    // features: [B,N,H] -> out [B,N,C].
    void project(const Tensor<T>& features, const ProjHead& head, Tensor<T>& hidden,
                 Tensor<T>& out) const {
        const int64_t R = features.numel() / cfg.hidden_dim;
        const int64_t H = cfg.hidden_dim, P = cfg.head_hidden, C = cfg.codebook_dim;
        hidden = Tensor<T>({R, P});
        gemm(features.ptr(), head.w1.w.ptr(), hidden.ptr(), R, H, P, false);
        add_bias(hidden.ptr(), head.b1.w.ptr(), R, P);
        Tensor<T> act({R, P});
        for (int64_t i = 0; i < R * P; ++i) act.ptr()[i] = gelu(hidden.ptr()[i]);
        out = Tensor<T>({R, C});
        gemm(act.ptr(), head.w2.w.ptr(), out.ptr(), R, P, C, false);
        add_bias(out.ptr(), head.b2.w.ptr(), R, C);
    }

    // Backward through project(); accumulates head gradients and returns the
    // gradient w.r.t. the tapped features.
    void project_backward(const Tensor<T>& features, const Tensor<T>& hidden_pre,
                          const Tensor<T>& dout, ProjHead& head, Tensor<T>& dfeatures) {
        const int64_t R = features.numel() / cfg.hidden_dim;
        const int64_t H = cfg.hidden_dim, P = cfg.head_hidden, C = cfg.codebook_dim;
        std::vector<T> scratch;
        Tensor<T> act({R, P});
        for (int64_t i = 0; i < R * P; ++i) act.ptr()[i] = gelu(hidden_pre.ptr()[i]);
        gemm_tn(act.ptr(), dout.ptr(), head.w2.g.ptr(), P, R, C, true, scratch);
        col_sum_add(dout.ptr(), head.b2.g.ptr(), R, C);
        Tensor<T> dact({R, P});
        gemm_nt(dout.ptr(), head.w2.w.ptr(), dact.ptr(), R, C, P, false, scratch);
        for (int64_t i = 0; i < R * P; ++i) dact.ptr()[i] *= gelu_grad(hidden_pre.ptr()[i]);
        gemm_tn(features.ptr(), dact.ptr(), head.w1.g.ptr(), H, R, P, true, scratch);
        col_sum_add(dact.ptr(), head.b1.g.ptr(), R, P);
        dfeatures = Tensor<T>({R, H});
        gemm_nt(dact.ptr(), head.w1.w.ptr(), dfeatures.ptr(), R, P, H, false, scratch);
    }

    // ------------------------------------------------------------- kv decoding

    KvCache<T> make_kv_cache(const std::vector<int64_t>& labels) const {
        for (int64_t lb : labels) {
            if (lb < 0 || lb > cfg.num_classes)
                throw std::invalid_argument("kv: label out of range");
        }
        KvCache<T> kv;
        const int64_t B = static_cast<int64_t>(labels.size());
        const int64_t H = cfg.hidden_dim, N = cfg.seq_len;
        kv.B = B;
        kv.pos = 0;
        kv.labels = labels;
        kv.cond_raw = Tensor<T>({B, H});
        kv.cond_silu = Tensor<T>({B, H});
        for (int64_t b = 0; b < B; ++b) {
            const T* ce = cls_emb.w.ptr() + labels[b] * H;
            for (int64_t j = 0; j < H; ++j) {
                kv.cond_raw.at(b, j) = ce[j];
                kv.cond_silu.at(b, j) = silu(ce[j]);
            }
        }
        kv.kn.assign(cfg.num_layers, Tensor<T>({B, N, H}));
        kv.v.assign(cfg.num_layers, Tensor<T>({B, N, H}));
        kv.mod.resize(cfg.num_layers);
        for (int64_t l = 0; l < cfg.num_layers; ++l) {
            kv.mod[l] = Tensor<T>({B, 6 * H});
            gemm(kv.cond_silu.ptr(), blocks[l].adaln_w.w.ptr(), kv.mod[l].ptr(), B, H, 6 * H,
                 false);
            add_bias(kv.mod[l].ptr(), blocks[l].adaln_b.w.ptr(), B, 6 * H);
        }
        kv.modf = Tensor<T>({B, 2 * H});
        gemm(kv.cond_silu.ptr(), adaln_f_w.w.ptr(), kv.modf.ptr(), B, H, 2 * H, false);
        add_bias(kv.modf.ptr(), adaln_f_b.w.ptr(), B, 2 * H);
        if (cfg.tied_codebook) build_emb_table(kv.emb_table);
        return kv;
    }

    // One incremental position. tokens[b] is the input token at the current
    // position (ignored at position 0). Returns logits [B,V].
    Tensor<T> decode_step(KvCache<T>& kv, const std::vector<uint16_t>& tokens) const {
        const int64_t B = kv.B, H = cfg.hidden_dim, V = cfg.vocab_size;
        const int64_t nh = cfg.num_heads, hd = cfg.head_dim(), M = cfg.mlp_hidden();
        const int64_t p = kv.pos;
        if (p >= cfg.seq_len) throw std::invalid_argument("decode_step: sequence exhausted");
        if (p > 0 && static_cast<int64_t>(tokens.size()) != B)
            throw std::invalid_argument("decode_step: token count mismatch");

        Tensor<T> h({B, H});
        for (int64_t b = 0; b < B; ++b) {
            const T* pe = pos_emb.w.ptr() + p * H;
            if (p == 0) {
                for (int64_t j = 0; j < H; ++j) h.at(b, j) = kv.cond_raw.at(b, j) + pe[j];
            } else {
                if (tokens[b] >= cfg.vocab_size)
                    throw std::invalid_argument("decode_step: token out of range");
                const T* te = cfg.tied_codebook ? kv.emb_table.ptr() + tokens[b] * H
                                                : tok_emb.w.ptr() + tokens[b] * H;
                for (int64_t j = 0; j < H; ++j) h.at(b, j) = te[j] + pe[j];
            }
        }

        Tensor<T> xhat({B, H}), inv({B, 1});
        Tensor<T> qkv({B, 3 * H});
        Tensor<T> attv({B, H});
        Tensor<T> proj({B, H});
        Tensor<T> fc1({B, M});
        const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));
        std::vector<T> prow(static_cast<size_t>(p + 1));
        std::vector<T> qn_local(static_cast<size_t>(hd));
        Tensor<T> a_in({B, H});
        for (int64_t l = 0; l < cfg.num_layers; ++l) {
            const auto& bp = blocks[l];
            const Tensor<T>& mod = kv.mod[l];
            layer_norm(h, xhat, inv);
            for (int64_t b = 0; b < B; ++b) {
                const T* sc = &mod.at(b, H);
                const T* sh = &mod.at(b, 0);
                for (int64_t j = 0; j < H; ++j)
                    a_in.at(b, j) = xhat.at(b, j) * (T(1) + sc[j]) + sh[j];
            }
            gemm(a_in.ptr(), bp.qkv_w.w.ptr(), qkv.ptr(), B, H, 3 * H, false);
            add_bias(qkv.ptr(), bp.qkv_b.w.ptr(), B, 3 * H);
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t hh = 0; hh < nh; ++hh) {
                    rms_norm(&qkv.at(b, hh * hd), bp.q_gain.w.ptr(), qn_local.data(), hd);
                    rms_norm(&qkv.at(b, H + hh * hd), bp.k_gain.w.ptr(),
                             &kv.kn[l].at(b, p, hh * hd), hd);
                    for (int64_t d = 0; d < hd; ++d)
                        kv.v[l].at(b, p, hh * hd + d) = qkv.at(b, 2 * H + hh * hd + d);
                    for (int64_t j = 0; j <= p; ++j) {
                        const T* kj = &kv.kn[l].at(b, j, hh * hd);
                        T s = T(0);
                        for (int64_t d = 0; d < hd; ++d) s += qn_local[static_cast<size_t>(d)] * kj[d];
                        prow[static_cast<size_t>(j)] = s * inv_sqrt_hd;
                    }
                    softmax_row(prow.data(), p + 1);
                    T* orow = &attv.at(b, hh * hd);
                    std::fill(orow, orow + hd, T(0));
                    for (int64_t j = 0; j <= p; ++j) {
                        const T* vj = &kv.v[l].at(b, j, hh * hd);
                        for (int64_t d = 0; d < hd; ++d)
                            orow[d] += prow[static_cast<size_t>(j)] * vj[d];
                    }
                }
            }
            gemm(attv.ptr(), bp.attn_out_w.w.ptr(), proj.ptr(), B, H, H, false);
            add_bias(proj.ptr(), bp.attn_out_b.w.ptr(), B, H);
            for (int64_t b = 0; b < B; ++b) {
                const T* g1 = &mod.at(b, 2 * H);
                for (int64_t j = 0; j < H; ++j) h.at(b, j) += g1[j] * proj.at(b, j);
            }
            layer_norm(h, xhat, inv);
            for (int64_t b = 0; b < B; ++b) {
                const T* sh = &mod.at(b, 3 * H);
                const T* sc = &mod.at(b, 4 * H);
                for (int64_t j = 0; j < H; ++j)
                    a_in.at(b, j) = xhat.at(b, j) * (T(1) + sc[j]) + sh[j];
            }
            gemm(a_in.ptr(), bp.fc1_w.w.ptr(), fc1.ptr(), B, H, M, false);
            add_bias(fc1.ptr(), bp.fc1_b.w.ptr(), B, M);
            for (int64_t i = 0; i < B * M; ++i) fc1.ptr()[i] = gelu(fc1.ptr()[i]);
            Tensor<T> mlp_out({B, H});
            gemm(fc1.ptr(), bp.fc2_w.w.ptr(), mlp_out.ptr(), B, M, H, false);
            add_bias(mlp_out.ptr(), bp.fc2_b.w.ptr(), B, H);
            for (int64_t b = 0; b < B; ++b) {
                const T* g2 = &mod.at(b, 5 * H);
                for (int64_t j = 0; j < H; ++j) h.at(b, j) += g2[j] * mlp_out.at(b, j);
            }
        }

        layer_norm(h, xhat, inv);
        Tensor<T> y({B, H});
        for (int64_t b = 0; b < B; ++b) {
            const T* sh = &kv.modf.at(b, 0);
            const T* sc = &kv.modf.at(b, H);
            for (int64_t j = 0; j < H; ++j)
                y.at(b, j) = xhat.at(b, j) * (T(1) + sc[j]) + sh[j];
        }
        Tensor<T> logits({B, V});
        if (cfg.tied_codebook) {
            const int64_t C = cfg.codebook_dim;
            Tensor<T> mid({B, C});
            gemm(y.ptr(), tie_out_w.w.ptr(), mid.ptr(), B, H, C, false);
            std::vector<T> zt(static_cast<size_t>(C * V));
            transpose(codebook.entries.data(), zt.data(), V, C);
            gemm(mid.ptr(), zt.data(), logits.ptr(), B, C, V, false);
        } else {
            gemm(y.ptr(), head_w.w.ptr(), logits.ptr(), B, H, V, false);
        }
        add_bias(logits.ptr(), head_b.w.ptr(), B, V);
        kv.pos += 1;
        return logits;
    }

private:
    std::vector<Param<T>*> registry_;

    void build_registry() {
        registry_.clear();
        if (!cfg.tied_codebook) registry_.push_back(&tok_emb);
        registry_.push_back(&cls_emb);
        registry_.push_back(&pos_emb);
        for (auto& b : blocks) {
            for (Param<T>* p : {&b.adaln_w, &b.adaln_b, &b.qkv_w, &b.qkv_b, &b.q_gain, &b.k_gain,
                                &b.attn_out_w, &b.attn_out_b, &b.fc1_w, &b.fc1_b, &b.fc2_w,
                                &b.fc2_b})
                registry_.push_back(p);
        }
        registry_.push_back(&adaln_f_w);
        registry_.push_back(&adaln_f_b);
        if (cfg.tied_codebook) {
            registry_.push_back(&tie_in_w);
            registry_.push_back(&tie_out_w);
        } else {
            registry_.push_back(&head_w);
        }
        registry_.push_back(&head_b);
        for (ProjHead* h : {&proj_shallow, &proj_deep}) {
            registry_.push_back(&h->w1);
            registry_.push_back(&h->b1);
            registry_.push_back(&h->w2);
            registry_.push_back(&h->b2);
        }
    }

    void validate_inputs(const std::vector<uint16_t>& tokens,
                         const std::vector<int64_t>& labels) const {
        for (uint16_t t : tokens) {
            if (t >= cfg.vocab_size) throw std::invalid_argument("forward: token out of range");
        }
        for (int64_t lb : labels) {
            if (lb < 0 || lb > cfg.num_classes)
                throw std::invalid_argument("forward: label out of range");
        }
    }

    void build_emb_table(Tensor<T>& table) const {
        table = Tensor<T>({cfg.vocab_size, cfg.hidden_dim});
        gemm(codebook.entries.data(), tie_in_w.w.ptr(), table.ptr(), cfg.vocab_size,
             cfg.codebook_dim, cfg.hidden_dim, false);
    }

    const Tensor<T>* tap_tensor(const ForwardCache<T>& cache, int64_t layer) const {
        if (cfg.tap_pre_block) return layer == 0 ? &cache.h0 : &cache.blocks[layer].h_in;
        return layer == cfg.num_layers - 1 ? &cache.h_final : &cache.blocks[layer + 1].h_in;
    }

    static void add_bias(T* x, const T* b, int64_t rows, int64_t cols) {
        for (int64_t i = 0; i < rows; ++i) {
            T* row = x + i * cols;
            for (int64_t j = 0; j < cols; ++j) row[j] += b[j];
        }
    }

    static void col_sum_add(const T* x, T* out, int64_t rows, int64_t cols) {
        for (int64_t i = 0; i < rows; ++i) {
            const T* row = x + i * cols;
            for (int64_t j = 0; j < cols; ++j) out[j] += row[j];
        }
    }

    static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
        for (int64_t i = 0; i < dst.numel(); ++i) dst.ptr()[i] += src.ptr()[i];
    }

    // Per-position layer norm without affine parameters. xhat keeps the input
    // shape; inv is flat over rows.
    void layer_norm(const Tensor<T>& x, Tensor<T>& xhat, Tensor<T>& inv) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t rows = x.numel() / H;
        xhat = Tensor<T>(x.shape);
        inv = Tensor<T>({rows, 1});
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = x.ptr() + r * H;
            T mean = T(0);
            for (int64_t j = 0; j < H; ++j) mean += in[j];
            mean /= static_cast<T>(H);
            T var = T(0);
            for (int64_t j = 0; j < H; ++j) var += (in[j] - mean) * (in[j] - mean);
            var /= static_cast<T>(H);
            const T iv = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
            inv.at(r, 0) = iv;
            T* out = xhat.ptr() + r * H;
            for (int64_t j = 0; j < H; ++j) out[j] = (in[j] - mean) * iv;
        }
    }

    void layer_norm_backward(const Tensor<T>& dxhat, const Tensor<T>& xhat, const Tensor<T>& inv,
                             Tensor<T>& dx, bool accumulate) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t rows = dxhat.numel() / H;
        for (int64_t r = 0; r < rows; ++r) {
            const T* dxh = dxhat.ptr() + r * H;
            const T* xh = xhat.ptr() + r * H;
            T mean_d = T(0), mean_dx = T(0);
            for (int64_t j = 0; j < H; ++j) {
                mean_d += dxh[j];
                mean_dx += dxh[j] * xh[j];
            }
            mean_d /= static_cast<T>(H);
            mean_dx /= static_cast<T>(H);
            const T iv = inv.ptr()[r];
            T* out = dx.ptr() + r * H;
            for (int64_t j = 0; j < H; ++j) {
                const T g = iv * (dxh[j] - mean_d - xh[j] * mean_dx);
                if (accumulate) out[j] += g;
                else out[j] = g;
            }
        }
    }

    static void rms_norm(const T* x, const T* gain, T* out, int64_t n) {
        T ms = T(0);
        for (int64_t i = 0; i < n; ++i) ms += x[i] * x[i];
        ms /= static_cast<T>(n);
        const T r = T(1) / std::sqrt(ms + static_cast<T>(kRmsEps));
        for (int64_t i = 0; i < n; ++i) out[i] = x[i] * r * gain[i];
    }

    static void rms_norm_backward(const T* x, const T* gain, const T* dout, T* dx, T* dgain,
                                  int64_t n) {
        T ms = T(0);
        for (int64_t i = 0; i < n; ++i) ms += x[i] * x[i];
        ms /= static_cast<T>(n);
        const T r = T(1) / std::sqrt(ms + static_cast<T>(kRmsEps));
        T dot = T(0);
        for (int64_t i = 0; i < n; ++i) dot += dout[i] * gain[i] * x[i];
        const T r3n = r * r * r / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i) {
            dx[i] += dout[i] * gain[i] * r - x[i] * r3n * dot;
            dgain[i] += dout[i] * x[i] * r;
        }
    }

    // out = xhat * (1 + scale) + shift with (shift, scale) at mod chunks
    // (chunk, chunk+1).
    void modulate(const Tensor<T>& xhat, const Tensor<T>& mod, int64_t chunk,
                  Tensor<T>& out) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t B = mod.dim(0);
        const int64_t N = xhat.numel() / (B * H);
        for (int64_t b = 0; b < B; ++b) {
            const T* sh = &mod.at(b, chunk * H);
            const T* sc = &mod.at(b, (chunk + 1) * H);
            for (int64_t p = 0; p < N; ++p) {
                const T* in = xhat.ptr() + (b * N + p) * H;
                T* o = out.ptr() + (b * N + p) * H;
                for (int64_t j = 0; j < H; ++j) o[j] = in[j] * (T(1) + sc[j]) + sh[j];
            }
        }
    }

    void modulate_backward(const Tensor<T>& dout, const Tensor<T>& xhat, const Tensor<T>& mod,
                           int64_t chunk, Tensor<T>& dxhat, Tensor<T>& dmod) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t B = mod.dim(0);
        const int64_t N = xhat.numel() / (B * H);
        for (int64_t b = 0; b < B; ++b) {
            const T* sc = &mod.at(b, (chunk + 1) * H);
            T* dsh = &dmod.at(b, chunk * H);
            T* dsc = &dmod.at(b, (chunk + 1) * H);
            for (int64_t p = 0; p < N; ++p) {
                const T* d = dout.ptr() + (b * N + p) * H;
                const T* xh = xhat.ptr() + (b * N + p) * H;
                T* dx = dxhat.ptr() + (b * N + p) * H;
                for (int64_t j = 0; j < H; ++j) {
                    dx[j] = d[j] * (T(1) + sc[j]);
                    dsc[j] += d[j] * xh[j];
                    dsh[j] += d[j];
                }
            }
        }
    }

    // out = base + gate * add, gate at mod chunk `chunk`.
    void gated_residual(const Tensor<T>& base, const Tensor<T>& add, const Tensor<T>& mod,
                        int64_t chunk, Tensor<T>& out) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t B = mod.dim(0);
        const int64_t N = base.numel() / (B * H);
        out = Tensor<T>({B, N, H});
        for (int64_t b = 0; b < B; ++b) {
            const T* g = &mod.at(b, chunk * H);
            for (int64_t p = 0; p < N; ++p) {
                const T* x = base.ptr() + (b * N + p) * H;
                const T* a = add.ptr() + (b * N + p) * H;
                T* o = out.ptr() + (b * N + p) * H;
                for (int64_t j = 0; j < H; ++j) o[j] = x[j] + g[j] * a[j];
            }
        }
    }

    // dh is d(out); produces d(add) and the gate gradient; dh itself remains
    // valid as d(base).
    void gated_residual_backward(const Tensor<T>& dh, const Tensor<T>& add, const Tensor<T>& mod,
                                 int64_t chunk, Tensor<T>& dadd, Tensor<T>& dmod) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t B = mod.dim(0);
        const int64_t N = add.numel() / (B * H);
        for (int64_t b = 0; b < B; ++b) {
            const T* g = &mod.at(b, chunk * H);
            T* dg = &dmod.at(b, chunk * H);
            for (int64_t p = 0; p < N; ++p) {
                const T* d = dh.ptr() + (b * N + p) * H;
                const T* a = add.ptr() + (b * N + p) * H;
                T* da = dadd.ptr() + (b * N + p) * H;
                for (int64_t j = 0; j < H; ++j) {
                    da[j] = d[j] * g[j];
                    dg[j] += d[j] * a[j];
                }
            }
        }
    }

    void modulate_final(const Tensor<T>& xhat, const Tensor<T>& mod, Tensor<T>& out) const {
        const int64_t H = cfg.hidden_dim;
        const int64_t B = mod.dim(0);
        const int64_t N = xhat.numel() / (B * H);
        for (int64_t b = 0; b < B; ++b) {
            const T* sh = &mod.at(b, 0);
            const T* sc = &mod.at(b, H);
            for (int64_t p = 0; p < N; ++p) {
                const T* in = xhat.ptr() + (b * N + p) * H;
                T* o = out.ptr() + (b * N + p) * H;
                for (int64_t j = 0; j < H; ++j) o[j] = in[j] * (T(1) + sc[j]) + sh[j];
            }
        }
    }

    void apply_keep(Tensor<T>& x, const std::vector<uint8_t>& keep, double p_drop) const {
        if (p_drop <= 0.0 || keep.empty()) return;
        const T scale = T(1) / static_cast<T>(1.0 - p_drop);
        for (int64_t i = 0; i < x.numel(); ++i) {
            x.ptr()[i] = keep[static_cast<size_t>(i)] ? x.ptr()[i] * scale : T(0);
        }
    }
};

}  // namespace rear
