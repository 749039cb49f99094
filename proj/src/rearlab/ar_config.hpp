#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace rear {

// Decoder-only transformer configuration. Position 0 of the sequence is the
// class slot; positions 1..seq_len-1 carry the (possibly corrupted) input
// tokens, and every position predicts the next clean token.
struct ARConfig {
    int64_t num_layers = 8;
    int64_t hidden_dim = 256;
    int64_t num_heads = 8;
    int64_t vocab_size = 256;   // K
    int64_t seq_len = 64;       // N
    int64_t num_classes = 10;   // label index num_classes is the null class
    double dropout_rate = 0.1;
    double mlp_ratio = 4.0;
    int64_t tap_shallow = 0;    // l
    int64_t tap_deep = 6;       // l'
    bool tap_pre_block = false; // tap the block input instead of its output
    int64_t head_hidden = 2048; // projection-head width
    int64_t codebook_dim = 16;  // c, projection-head output
    bool tied_codebook = false;

    // l' defaults to three-quarter depth; l stays at the first block.
    static int64_t default_tap_deep(int64_t layers) {
        int64_t t = static_cast<int64_t>(std::llround(0.75 * static_cast<double>(layers)));
        if (t >= layers) t = layers - 1;
        if (t < 1) t = 1;
        return t;
    }

    int64_t head_dim() const { return hidden_dim / num_heads; }
    int64_t mlp_hidden() const {
        return static_cast<int64_t>(std::llround(mlp_ratio * static_cast<double>(hidden_dim)));
    }
    int64_t null_class() const { return num_classes; }

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("ar: num_layers must be >= 1");
        if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0)
            throw std::invalid_argument("ar: num_heads must divide hidden_dim");
        if (vocab_size < 2) throw std::invalid_argument("ar: vocab_size must be >= 2");
        if (seq_len < 2) throw std::invalid_argument("ar: seq_len must be >= 2");
        if (num_classes < 1) throw std::invalid_argument("ar: num_classes must be >= 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw std::invalid_argument("ar: dropout_rate must be in [0,1)");
        if (!(tap_shallow >= 0 && tap_shallow < tap_deep && tap_deep < num_layers))
            throw std::invalid_argument("ar: taps must satisfy 0 <= l < l' < num_layers");
        if (head_hidden < 1) throw std::invalid_argument("ar: head_hidden must be >= 1");
        if (codebook_dim < 1) throw std::invalid_argument("ar: codebook_dim must be >= 1");
        if (mlp_ratio <= 0.0) throw std::invalid_argument("ar: mlp_ratio must be > 0");
    }
};

}  // namespace rear
