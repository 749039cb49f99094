#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rearlab/image_types.hpp"
#include "rearlab/metrics.hpp"

namespace rear {

struct TokenizerConfig {
    int64_t image_size = 32;
    int64_t downsample = 4;      // power of two; grid is (image_size/downsample)^2
    int64_t codebook_size = 256; // K
    int64_t embed_dim = 16;      // c
    int64_t base_channels = 32;

    // training
    double commitment = 0.25;
    double ema_decay = 0.99;
    double lr = 1e-3;
    uint64_t seed = 0;

    int64_t grid() const { return image_size / downsample; }
    int64_t stages() const {
        int64_t s = downsample, n = 0;
        while (s > 1) {
            s /= 2;
            ++n;
        }
        return n;
    }

    void validate() const {
        if (image_size < 4) throw std::invalid_argument("tokenizer: image_size too small");
        int64_t s = downsample;
        while (s > 1) {
            if (s % 2 != 0) throw std::invalid_argument("tokenizer: downsample must be 2^k");
            s /= 2;
        }
        if (downsample < 2) throw std::invalid_argument("tokenizer: downsample must be >= 2");
        if (image_size % downsample != 0)
            throw std::invalid_argument("tokenizer: image_size not divisible by downsample");
        if (codebook_size < 2 || codebook_size > 65536)
            throw std::invalid_argument("tokenizer: codebook_size must be in [2, 65536]");
        if (embed_dim < 1) throw std::invalid_argument("tokenizer: embed_dim must be >= 1");
        if (base_channels < 1) throw std::invalid_argument("tokenizer: base_channels >= 1");
        if (!(commitment >= 0.0)) throw std::invalid_argument("tokenizer: commitment >= 0");
        if (!(ema_decay > 0.0 && ema_decay < 1.0))
            throw std::invalid_argument("tokenizer: ema_decay in (0,1)");
    }
};

// Convolutional encoder / vector quantizer / decoder. Encode and decode are
// pure given parameters; training mutates under a single writer.
class VQTokenizer {
public:
    explicit VQTokenizer(TokenizerConfig cfg);
    ~VQTokenizer();
    VQTokenizer(const VQTokenizer&) = delete;
    VQTokenizer& operator=(const VQTokenizer&) = delete;

    const TokenizerConfig& config() const { return cfg_; }

    void init_params(uint64_t seed);

    LatentGrid encode(const ImageBatch& images) const;
    std::pair<QuantizedGrid, TokenGrid> quantize_latent(const LatentGrid& latent) const;
    ImageBatch decode(const QuantizedGrid& q) const;

    TokenGrid tokenize(const ImageBatch& images, const std::vector<int64_t>& labels) const;
    ImageBatch decode_tokens(const TokenGrid& tokens) const;
    ImageBatch reconstruct(const ImageBatch& images) const;  // decode(quantize(encode(x)))

    const Codebook& codebook() const { return codebook_; }
    uint32_t codebook_checksum() const;

    struct StepStats {
        double recon_mse = 0.0;
        double commit = 0.0;
        double total = 0.0;
        int64_t codes_used = 0;
    };
    // One optimizer update on (encoder, decoder) plus an EMA codebook update.
    StepStats train_step(const ImageBatch& batch, uint64_t step);

    // Named parameter/buffer views for checkpointing.
    struct NamedBuffer {
        std::string name;
        std::vector<float>* data;
    };
    std::vector<NamedBuffer> named_buffers();

    // Intermediate encoder activations (one map per downsampling stage); the
    // desk-scale perceptual extractor.
    std::vector<LatentGrid> encoder_features(const ImageBatch& images) const;

private:
    struct Impl;
    TokenizerConfig cfg_;
    Codebook codebook_;
    std::unique_ptr<Impl> impl_;
};

// Perceptual extractor backed by a frozen tokenizer encoder.
class TokenizerPerceptualExtractor : public PerceptualExtractor {
public:
    explicit TokenizerPerceptualExtractor(const VQTokenizer& tok) : tok_(tok) {}
    std::vector<LatentGrid> features(const ImageBatch& images) const override {
        return tok_.encoder_features(images);
    }

private:
    const VQTokenizer& tok_;
};

}  // namespace rear
