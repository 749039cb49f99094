#include "rearlab/vq_tokenizer.hpp"

#include <cmath>
#include <stdexcept>

#include <zlib.h>

#include "rearlab/rng.hpp"
#include "rearlab/tensor.hpp"

namespace rear {

namespace {

// Feature map in [B,H,W,C] layout.
struct Map {
    int64_t B = 0, H = 0, W = 0, C = 0;
    std::vector<float> data;
    Map() = default;
    Map(int64_t b, int64_t h, int64_t w, int64_t c)
        : B(b), H(h), W(w), C(c), data(static_cast<size_t>(b * h * w * c), 0.0f) {}
    float* row(int64_t b, int64_t y, int64_t x) {
        return data.data() + ((b * H + y) * W + x) * C;
    }
    const float* row(int64_t b, int64_t y, int64_t x) const {
        return data.data() + ((b * H + y) * W + x) * C;
    }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

int64_t out_dim(int64_t in, int64_t stride) { return (in + 2 - 3) / stride + 1; }

// 3x3 convolution, pad 1. col rows are output positions; row layout is
// (ky, kx, ic).
void im2col(const Map& in, int64_t stride, std::vector<float>& col) {
    const int64_t OH = out_dim(in.H, stride), OW = out_dim(in.W, stride);
    const int64_t IC = in.C;
    col.assign(static_cast<size_t>(in.B * OH * OW * 9 * IC), 0.0f);
    for (int64_t b = 0; b < in.B; ++b) {
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
                float* dst = col.data() + ((b * OH + oy) * OW + ox) * 9 * IC;
                for (int64_t ky = 0; ky < 3; ++ky) {
                    const int64_t iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= in.H) continue;
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        const int64_t ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= in.W) continue;
                        const float* src = in.row(b, iy, ix);
                        std::copy(src, src + IC, dst + (ky * 3 + kx) * IC);
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<float>& dcol, int64_t stride, Map& din) {
    const int64_t OH = out_dim(din.H, stride), OW = out_dim(din.W, stride);
    const int64_t IC = din.C;
    std::fill(din.data.begin(), din.data.end(), 0.0f);
    for (int64_t b = 0; b < din.B; ++b) {
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
                const float* src = dcol.data() + ((b * OH + oy) * OW + ox) * 9 * IC;
                for (int64_t ky = 0; ky < 3; ++ky) {
                    const int64_t iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= din.H) continue;
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        const int64_t ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= din.W) continue;
                        float* dst = din.row(b, iy, ix);
                        const float* s = src + (ky * 3 + kx) * IC;
                        for (int64_t c = 0; c < IC; ++c) dst[c] += s[c];
                    }
                }
            }
        }
    }
}

struct Conv {
    int64_t in_ch = 0, out_ch = 0, stride = 1;
    std::vector<float> w;  // [9*in_ch, out_ch]
    std::vector<float> b;  // [out_ch]
    std::vector<float> gw, gb;
    std::vector<float> mw, vw, mb, vb;  // adam state

    void init(int64_t ic, int64_t oc, int64_t s, Rng& rng) {
        in_ch = ic;
        out_ch = oc;
        stride = s;
        const size_t wn = static_cast<size_t>(9 * ic * oc);
        w.resize(wn);
        const float std_w = std::sqrt(2.0f / static_cast<float>(9 * ic));
        for (auto& v : w) v = static_cast<float>(rng.normal()) * std_w;
        b.assign(static_cast<size_t>(oc), 0.0f);
        gw.assign(wn, 0.0f);
        gb.assign(static_cast<size_t>(oc), 0.0f);
        mw.assign(wn, 0.0f);
        vw.assign(wn, 0.0f);
        mb.assign(static_cast<size_t>(oc), 0.0f);
        vb.assign(static_cast<size_t>(oc), 0.0f);
    }

    Map forward(const Map& in, std::vector<float>& col) const {
        im2col(in, stride, col);
        const int64_t OH = out_dim(in.H, stride), OW = out_dim(in.W, stride);
        Map out(in.B, OH, OW, out_ch);
        gemm(col.data(), w.data(), out.data.data(), in.B * OH * OW, 9 * in_ch, out_ch, false);
        for (int64_t r = 0; r < in.B * OH * OW; ++r) {
            float* row = out.data.data() + r * out_ch;
            for (int64_t c = 0; c < out_ch; ++c) row[c] += b[c];
        }
        return out;
    }

    // dout is [B,OH,OW,OC]; returns din. Recomputes im2col from `in`.
    Map backward(const Map& in, const Map& dout) {
        std::vector<float> col;
        im2col(in, stride, col);
        const int64_t rows = dout.B * dout.H * dout.W;
        std::vector<float> scratch;
        gemm_tn(col.data(), dout.data.data(), gw.data(), 9 * in_ch, rows, out_ch, true, scratch);
        for (int64_t r = 0; r < rows; ++r) {
            const float* row = dout.data.data() + r * out_ch;
            for (int64_t c = 0; c < out_ch; ++c) gb[c] += row[c];
        }
        std::vector<float> dcol(col.size());
        gemm_nt(dout.data.data(), w.data(), dcol.data(), rows, out_ch, 9 * in_ch, false, scratch);
        Map din(in.B, in.H, in.W, in.C);
        col2im(dcol, stride, din);
        return din;
    }

    void adam_step(double lr, int64_t t) {
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        auto upd = [&](std::vector<float>& p, std::vector<float>& g, std::vector<float>& m,
                       std::vector<float>& v) {
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
                v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
                const double mhat = m[i] / c1, vhat = v[i] / c2;
                p[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
                g[i] = 0.0f;
            }
        };
        upd(w, gw, mw, vw);
        upd(b, gb, mb, vb);
    }
};

void relu_inplace(Map& m) {
    for (auto& v : m.data) v = v > 0.0f ? v : 0.0f;
}

void relu_backward(const Map& pre, Map& grad) {
    for (size_t i = 0; i < grad.data.size(); ++i) {
        if (pre.data[i] <= 0.0f) grad.data[i] = 0.0f;
    }
}

Map upsample2(const Map& in) {
    Map out(in.B, in.H * 2, in.W * 2, in.C);
    for (int64_t b = 0; b < in.B; ++b) {
        for (int64_t y = 0; y < in.H; ++y) {
            for (int64_t x = 0; x < in.W; ++x) {
                const float* src = in.row(b, y, x);
                for (int64_t dy = 0; dy < 2; ++dy) {
                    for (int64_t dx = 0; dx < 2; ++dx) {
                        std::copy(src, src + in.C, out.row(b, 2 * y + dy, 2 * x + dx));
                    }
                }
            }
        }
    }
    return out;
}

Map upsample2_backward(const Map& dout) {
    Map din(dout.B, dout.H / 2, dout.W / 2, dout.C);
    for (int64_t b = 0; b < din.B; ++b) {
        for (int64_t y = 0; y < din.H; ++y) {
            for (int64_t x = 0; x < din.W; ++x) {
                float* dst = din.row(b, y, x);
                for (int64_t dy = 0; dy < 2; ++dy) {
                    for (int64_t dx = 0; dx < 2; ++dx) {
                        const float* src = dout.row(b, 2 * y + dy, 2 * x + dx);
                        for (int64_t c = 0; c < dout.C; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
    return din;
}

Map image_to_map(const ImageBatch& images) {
    Map m(images.B, images.H, images.W, 3);
    m.data = images.data;
    return m;
}

}  // namespace

struct VQTokenizer::Impl {
    std::vector<Conv> enc;
    std::vector<Conv> dec;
    std::vector<float> ema_cluster;  // [K]
    std::vector<float> ema_avg;      // [K*c]
    std::vector<float> dead_steps;   // per-code consecutive zero-count steps
    int64_t adam_t = 0;

    // encoder runs the conv stack; stage outputs (post-ReLU after each strided
    // conv) are the perceptual feature maps
    std::vector<Map> encode_maps(const TokenizerConfig& cfg, const Map& in,
                                 std::vector<Map>* pre_acts) const {
        std::vector<Map> acts;
        acts.push_back(in);
        std::vector<float> col;
        for (size_t i = 0; i < enc.size(); ++i) {
            Map out = enc[i].forward(acts.back(), col);
            if (pre_acts != nullptr) pre_acts->push_back(out);
            if (i + 1 < enc.size()) relu_inplace(out);  // last conv is linear
            acts.push_back(std::move(out));
        }
        (void)cfg;
        return acts;
    }

    // layout: conv relu, then per stage (upsample, conv relu), final conv
    // sigmoid. acts[i] is conv i's pre-upsample input; acts.back() the image.
    std::vector<Map> decode_maps(const Map& in, std::vector<Map>* pre_acts,
                                 std::vector<Map>* up_inputs) const {
        std::vector<Map> acts;
        acts.push_back(in);
        std::vector<float> col;
        const size_t L = dec.size();
        for (size_t i = 0; i < L; ++i) {
            Map cur = acts.back();
            if (i >= 1 && i + 1 < L) {
                if (up_inputs != nullptr) up_inputs->push_back(cur);
                cur = upsample2(cur);
            }
            Map out = dec[i].forward(cur, col);
            if (pre_acts != nullptr) pre_acts->push_back(out);
            if (i + 1 < L) {
                relu_inplace(out);
            } else {
                for (auto& v : out.data) v = 1.0f / (1.0f + std::exp(-v));
            }
            acts.push_back(std::move(out));
        }
        return acts;
    }
};

VQTokenizer::VQTokenizer(TokenizerConfig cfg) : cfg_(cfg), impl_(new Impl) {
    cfg_.validate();
    codebook_ = Codebook(cfg_.codebook_size, cfg_.embed_dim);
    const int64_t C = cfg_.base_channels;
    const int64_t stages = cfg_.stages();
    Rng rng(cfg_.seed, RngStream::Init, 0xf00d);
    impl_->enc.resize(static_cast<size_t>(stages + 2));
    impl_->enc[0].init(3, C, 1, rng);
    for (int64_t s = 0; s < stages; ++s) {
        impl_->enc[static_cast<size_t>(1 + s)].init(s == 0 ? C : 2 * C, 2 * C, 2, rng);
    }
    impl_->enc.back().init(stages > 0 ? 2 * C : C, cfg_.embed_dim, 1, rng);

    impl_->dec.resize(static_cast<size_t>(stages + 2));
    impl_->dec[0].init(cfg_.embed_dim, 2 * C, 1, rng);
    for (int64_t s = 0; s < stages; ++s) {
        const bool last_stage = s == stages - 1;
        impl_->dec[static_cast<size_t>(1 + s)].init(2 * C, last_stage ? C : 2 * C, 1, rng);
    }
    impl_->dec.back().init(C, 3, 1, rng);

    init_params(cfg_.seed);
}

VQTokenizer::~VQTokenizer() = default;

void VQTokenizer::init_params(uint64_t seed) {
    Rng rng(seed, RngStream::Init, 0xc0de);
    for (auto& c : impl_->enc) {
        Rng r2(rng.next_u64());
        c.init(c.in_ch, c.out_ch, c.stride, r2);
    }
    for (auto& c : impl_->dec) {
        Rng r2(rng.next_u64());
        c.init(c.in_ch, c.out_ch, c.stride, r2);
    }
    const float std_e = 1.0f / std::sqrt(static_cast<float>(cfg_.embed_dim));
    for (auto& v : codebook_.entries) v = static_cast<float>(rng.normal()) * std_e;
    impl_->ema_cluster.assign(static_cast<size_t>(cfg_.codebook_size), 1.0f);
    impl_->ema_avg.assign(codebook_.entries.begin(), codebook_.entries.end());
    impl_->dead_steps.assign(static_cast<size_t>(cfg_.codebook_size), 0.0f);
    impl_->adam_t = 0;
}

LatentGrid VQTokenizer::encode(const ImageBatch& images) const {
    if (images.H != cfg_.image_size || images.W != cfg_.image_size)
        throw std::invalid_argument("encode: image shape does not match tokenizer config");
    const Map in = image_to_map(images);
    const auto acts = impl_->encode_maps(cfg_, in, nullptr);
    const Map& z = acts.back();
    LatentGrid out(z.B, z.H, z.W, z.C);
    out.data = z.data;
    return out;
}

std::vector<LatentGrid> VQTokenizer::encoder_features(const ImageBatch& images) const {
    if (images.H != cfg_.image_size || images.W != cfg_.image_size)
        throw std::invalid_argument("encoder_features: image shape mismatch");
    const Map in = image_to_map(images);
    const auto acts = impl_->encode_maps(cfg_, in, nullptr);
    // acts[0] is the input; stage outputs sit at indices 2..2+stages-1
    std::vector<LatentGrid> out;
    for (int64_t s = 0; s < cfg_.stages(); ++s) {
        const Map& m = acts[static_cast<size_t>(2 + s)];
        LatentGrid g(m.B, m.H, m.W, m.C);
        g.data = m.data;
        out.push_back(std::move(g));
    }
    return out;
}

std::pair<QuantizedGrid, TokenGrid> VQTokenizer::quantize_latent(const LatentGrid& latent) const {
    return quantize(latent, codebook_);
}

ImageBatch VQTokenizer::decode(const QuantizedGrid& q) const {
    if (q.h != cfg_.grid() || q.w != cfg_.grid() || q.c != cfg_.embed_dim)
        throw std::invalid_argument("decode: grid shape does not match tokenizer config");
    Map in(q.B, q.h, q.w, q.c);
    in.data = q.data;
    const auto acts = impl_->decode_maps(in, nullptr, nullptr);
    const Map& out = acts.back();
    ImageBatch img(out.B, out.H, out.W);
    img.data = out.data;
    for (auto& v : img.data) v = std::min(1.0f, std::max(0.0f, v));
    return img;
}

TokenGrid VQTokenizer::tokenize(const ImageBatch& images,
                                const std::vector<int64_t>& labels) const {
    auto [q, t] = quantize_latent(encode(images));
    (void)q;
    if (!labels.empty()) {
        if (static_cast<int64_t>(labels.size()) != images.B)
            throw std::invalid_argument("tokenize: label count mismatch");
        t.labels = labels;
    }
    return t;
}

ImageBatch VQTokenizer::decode_tokens(const TokenGrid& tokens) const {
    return decode(lookup_grid(tokens, codebook_));
}

ImageBatch VQTokenizer::reconstruct(const ImageBatch& images) const {
    auto [q, t] = quantize_latent(encode(images));
    (void)t;
    return decode(q);
}

uint32_t VQTokenizer::codebook_checksum() const {
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(codebook_.entries.data()),
              static_cast<uInt>(codebook_.entries.size() * sizeof(float))));
}

VQTokenizer::StepStats VQTokenizer::train_step(const ImageBatch& batch, uint64_t step) {
    const Map input = image_to_map(batch);

    // ---- encoder forward with caches
    std::vector<Map> enc_pre;
    std::vector<Map> enc_acts = impl_->encode_maps(cfg_, input, &enc_pre);
    const Map& z = enc_acts.back();
    const int64_t n_vec = z.B * z.H * z.W;
    const int64_t c = cfg_.embed_dim;
    const int64_t K = cfg_.codebook_size;

    // ---- quantize
    std::vector<int64_t> assign(static_cast<size_t>(n_vec));
    Map zq(z.B, z.H, z.W, z.C);
    LatentGrid lg(z.B, z.H, z.W, z.C);
    lg.data = z.data;
    std::vector<float> counts(static_cast<size_t>(K), 0.0f);
    std::vector<float> sums(static_cast<size_t>(K * c), 0.0f);
    for (int64_t i = 0; i < n_vec; ++i) {
        const float* v = z.data.data() + i * c;
        const int64_t k = nearest_entry(v, codebook_);
        assign[static_cast<size_t>(i)] = k;
        std::copy(codebook_.entry(k), codebook_.entry(k) + c, zq.data.data() + i * c);
        counts[static_cast<size_t>(k)] += 1.0f;
        float* s = sums.data() + k * c;
        for (int64_t j = 0; j < c; ++j) s[j] += v[j];
    }

    // ---- decoder forward with caches (input: straight-through zq)
    std::vector<Map> dec_pre;
    std::vector<Map> up_inputs;
    std::vector<Map> dec_acts = impl_->decode_maps(zq, &dec_pre, &up_inputs);
    const Map& recon = dec_acts.back();

    // ---- losses
    StepStats stats;
    const int64_t n_px = recon.numel();
    double mse = 0.0;
    Map drecon(recon.B, recon.H, recon.W, recon.C);
    for (int64_t i = 0; i < n_px; ++i) {
        const double d = static_cast<double>(recon.data[static_cast<size_t>(i)]) -
                         static_cast<double>(input.data[static_cast<size_t>(i)]);
        mse += d * d;
        drecon.data[static_cast<size_t>(i)] =
            static_cast<float>(2.0 * d / static_cast<double>(n_px));
    }
    mse /= static_cast<double>(n_px);

    double commit = 0.0;
    const int64_t n_lat = n_vec * c;
    for (int64_t i = 0; i < n_lat; ++i) {
        const double d = static_cast<double>(z.data[static_cast<size_t>(i)]) -
                         static_cast<double>(zq.data[static_cast<size_t>(i)]);
        commit += d * d;
    }
    commit /= static_cast<double>(n_lat);

    stats.recon_mse = mse;
    stats.commit = commit;
    stats.total = mse + cfg_.commitment * commit;
    for (int64_t k = 0; k < K; ++k) stats.codes_used += counts[static_cast<size_t>(k)] > 0;
    if (!std::isfinite(stats.total))
        throw std::runtime_error("tokenizer training diverged (non-finite loss)");

    // ---- decoder backward: sigmoid, then conv/upsample chain
    Map grad = drecon;
    for (int64_t i = 0; i < n_px; ++i) {
        const float y = recon.data[static_cast<size_t>(i)];
        grad.data[static_cast<size_t>(i)] *= y * (1.0f - y);
    }
    for (int64_t i = static_cast<int64_t>(impl_->dec.size()) - 1; i >= 0; --i) {
        if (i + 1 < static_cast<int64_t>(impl_->dec.size())) relu_backward(dec_pre[i], grad);
        const bool upsampled = i >= 1 && i + 1 < static_cast<int64_t>(impl_->dec.size());
        Map up_storage;
        const Map* conv_in;
        if (upsampled) {
            up_storage = upsample2(up_inputs[static_cast<size_t>(i - 1)]);
            conv_in = &up_storage;
        } else {
            conv_in = i == 0 ? &zq : &dec_acts[static_cast<size_t>(i)];
        }
        grad = impl_->dec[static_cast<size_t>(i)].backward(*conv_in, grad);
        if (upsampled) grad = upsample2_backward(grad);
    }

    // ---- straight-through into the encoder plus commitment pull
    Map dz = grad;  // d(loss)/d(zq) passes straight through the quantizer
    const float commit_scale = static_cast<float>(2.0 * cfg_.commitment / n_lat);
    for (int64_t i = 0; i < n_lat; ++i) {
        dz.data[static_cast<size_t>(i)] +=
            commit_scale * (z.data[static_cast<size_t>(i)] - zq.data[static_cast<size_t>(i)]);
    }

    // ---- encoder backward
    grad = std::move(dz);
    for (int64_t i = static_cast<int64_t>(impl_->enc.size()) - 1; i >= 0; --i) {
        if (i + 1 < static_cast<int64_t>(impl_->enc.size())) relu_backward(enc_pre[i], grad);
        grad = impl_->enc[static_cast<size_t>(i)].backward(enc_acts[static_cast<size_t>(i)],
                                                           grad);
    }

    // ---- optimizer
    impl_->adam_t += 1;
    for (auto& cv : impl_->enc) cv.adam_step(cfg_.lr, impl_->adam_t);
    for (auto& cv : impl_->dec) cv.adam_step(cfg_.lr, impl_->adam_t);

    // ---- EMA codebook update with Laplace smoothing
    const double decay = cfg_.ema_decay;
    double n_total = 0.0;
    for (int64_t k = 0; k < K; ++k) {
        impl_->ema_cluster[static_cast<size_t>(k)] = static_cast<float>(
            decay * impl_->ema_cluster[static_cast<size_t>(k)] +
            (1.0 - decay) * counts[static_cast<size_t>(k)]);
        n_total += impl_->ema_cluster[static_cast<size_t>(k)];
        for (int64_t j = 0; j < c; ++j) {
            impl_->ema_avg[static_cast<size_t>(k * c + j)] = static_cast<float>(
                decay * impl_->ema_avg[static_cast<size_t>(k * c + j)] +
                (1.0 - decay) * sums[static_cast<size_t>(k * c + j)]);
        }
    }
    const double eps = 1e-5;
    for (int64_t k = 0; k < K; ++k) {
        const double smoothed = (impl_->ema_cluster[static_cast<size_t>(k)] + eps) /
                                (n_total + static_cast<double>(K) * eps) * n_total;
        for (int64_t j = 0; j < c; ++j) {
            codebook_.entry(k)[j] =
                static_cast<float>(impl_->ema_avg[static_cast<size_t>(k * c + j)] / smoothed);
        }
    }

    // ---- dead-code reseeding from current batch latents
    Rng reseed_rng(cfg_.seed, RngStream::Init, step, 0xdead);
    for (int64_t k = 0; k < K; ++k) {
        if (counts[static_cast<size_t>(k)] == 0.0f) {
            impl_->dead_steps[static_cast<size_t>(k)] += 1.0f;
        } else {
            impl_->dead_steps[static_cast<size_t>(k)] = 0.0f;
        }
        if (impl_->dead_steps[static_cast<size_t>(k)] >= 25.0f) {
            const int64_t src = static_cast<int64_t>(reseed_rng.below(
                static_cast<uint64_t>(n_vec)));
            const float* v = z.data.data() + src * c;
            std::copy(v, v + c, codebook_.entry(k));
            impl_->ema_cluster[static_cast<size_t>(k)] = 1.0f;
            std::copy(v, v + c, impl_->ema_avg.data() + k * c);
            impl_->dead_steps[static_cast<size_t>(k)] = 0.0f;
        }
    }

    return stats;
}

std::vector<VQTokenizer::NamedBuffer> VQTokenizer::named_buffers() {
    std::vector<NamedBuffer> out;
    for (size_t i = 0; i < impl_->enc.size(); ++i) {
        out.push_back({"enc" + std::to_string(i) + ".w", &impl_->enc[i].w});
        out.push_back({"enc" + std::to_string(i) + ".b", &impl_->enc[i].b});
    }
    for (size_t i = 0; i < impl_->dec.size(); ++i) {
        out.push_back({"dec" + std::to_string(i) + ".w", &impl_->dec[i].w});
        out.push_back({"dec" + std::to_string(i) + ".b", &impl_->dec[i].b});
    }
    out.push_back({"codebook", &codebook_.entries});
    out.push_back({"ema_cluster", &impl_->ema_cluster});
    out.push_back({"ema_avg", &impl_->ema_avg});
    out.push_back({"dead_steps", &impl_->dead_steps});
    return out;
}

}  // namespace rear
