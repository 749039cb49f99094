#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rearlab/codebook.hpp"

namespace rear {

// Batch of RGB images with values in [0,1]. Logical shape B x 3 x H x W;
// storage is [B,H,W,3] so per-pixel channel vectors stay contiguous.
struct ImageBatch {
    int64_t B = 0, H = 0, W = 0;
    std::vector<float> data;

    ImageBatch() = default;
    ImageBatch(int64_t b, int64_t h, int64_t w)
        : B(b), H(h), W(w), data(static_cast<size_t>(b * h * w * 3), 0.0f) {}

    float& at(int64_t b, int64_t ch, int64_t y, int64_t x) {
        return data[static_cast<size_t>(((b * H + y) * W + x) * 3 + ch)];
    }
    float at(int64_t b, int64_t ch, int64_t y, int64_t x) const {
        return data[static_cast<size_t>(((b * H + y) * W + x) * 3 + ch)];
    }
    int64_t pixels_per_image() const { return H * W * 3; }
};

// Encoder features. Logical shape B x c x h x w; storage [B,h,w,c].
struct LatentGrid {
    int64_t B = 0, h = 0, w = 0, c = 0;
    std::vector<float> data;

    LatentGrid() = default;
    LatentGrid(int64_t b, int64_t hh, int64_t ww, int64_t cc)
        : B(b), h(hh), w(ww), c(cc), data(static_cast<size_t>(b * hh * ww * cc), 0.0f) {}

    float* vec(int64_t b, int64_t y, int64_t x) {
        return data.data() + ((b * h + y) * w + x) * c;
    }
    const float* vec(int64_t b, int64_t y, int64_t x) const {
        return data.data() + ((b * h + y) * w + x) * c;
    }
};

// Discrete token grid plus per-item class label.
struct TokenGrid {
    int64_t B = 0, h = 0, w = 0;
    std::vector<uint16_t> indices;  // [B,h,w] row-major
    std::vector<int64_t> labels;    // [B]

    TokenGrid() = default;
    TokenGrid(int64_t b, int64_t hh, int64_t ww)
        : B(b), h(hh), w(ww), indices(static_cast<size_t>(b * hh * ww), 0), labels(b, 0) {}

    int64_t seq_len() const { return h * w; }
    const uint16_t* seq(int64_t b) const { return indices.data() + b * h * w; }
    uint16_t* seq(int64_t b) { return indices.data() + b * h * w; }
};

// Quantized embeddings: every spatial vector equals a codebook entry of the
// paired TokenGrid exactly.
struct QuantizedGrid {
    int64_t B = 0, h = 0, w = 0, c = 0;
    std::vector<float> data;  // [B,h,w,c]

    QuantizedGrid() = default;
    QuantizedGrid(int64_t b, int64_t hh, int64_t ww, int64_t cc)
        : B(b), h(hh), w(ww), c(cc), data(static_cast<size_t>(b * hh * ww * cc), 0.0f) {}

    float* vec(int64_t b, int64_t y, int64_t x) {
        return data.data() + ((b * h + y) * w + x) * c;
    }
    const float* vec(int64_t b, int64_t y, int64_t x) const {
        return data.data() + ((b * h + y) * w + x) * c;
    }
};

// Element-wise nearest-neighbor quantization of a latent grid against the
// codebook. Ties break to the lowest index.
inline std::pair<QuantizedGrid, TokenGrid> quantize(const LatentGrid& latent,
                                                    const Codebook& cb) {
    if (latent.c != cb.c) throw std::invalid_argument("quantize: latent dim != codebook dim");
    QuantizedGrid q(latent.B, latent.h, latent.w, latent.c);
    TokenGrid t(latent.B, latent.h, latent.w);
    for (int64_t b = 0; b < latent.B; ++b) {
        for (int64_t y = 0; y < latent.h; ++y) {
            for (int64_t x = 0; x < latent.w; ++x) {
                const int64_t k = nearest_entry(latent.vec(b, y, x), cb);
                t.indices[static_cast<size_t>((b * latent.h + y) * latent.w + x)] =
                    static_cast<uint16_t>(k);
                const float* e = cb.entry(k);
                std::copy(e, e + cb.c, q.vec(b, y, x));
            }
        }
    }
    return {std::move(q), std::move(t)};
}

// Materializes the quantized grid for a token grid (the decoder's input).
inline QuantizedGrid lookup_grid(const TokenGrid& tokens, const Codebook& cb) {
    QuantizedGrid q(tokens.B, tokens.h, tokens.w, cb.c);
    lookup_embeddings(tokens.indices, cb, q.data.data());
    return q;
}

}  // namespace rear
