#include "rearlab/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "rearlab/math_util.hpp"
#include "rearlab/regularizers.hpp"

namespace rear {

double ctr(const std::vector<uint16_t>& pred, const std::vector<uint16_t>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("ctr: length mismatch");
    if (pred.empty()) throw std::invalid_argument("ctr: empty sequences");
    int64_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gt[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<uint16_t> teacher_forced_predictions(const ARModel<float>& model,
                                                 const std::vector<uint16_t>& seqs,
                                                 const std::vector<int64_t>& labels) {
    return teacher_forced_predictions_noisy(model, seqs, labels);
}

std::vector<uint16_t> teacher_forced_predictions_noisy(const ARModel<float>& model,
                                                       const std::vector<uint16_t>& inputs,
                                                       const std::vector<int64_t>& labels) {
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t V = model.cfg.vocab_size;
    ForwardCache<float> cache;
    model.forward(to_model_inputs(inputs, B, N), labels, false, cache);
    std::vector<uint16_t> pred(static_cast<size_t>(B * N));
    for (int64_t r = 0; r < B * N; ++r) {
        const float* row = cache.logits.ptr() + r * V;
        int64_t best = 0;
        for (int64_t v = 1; v < V; ++v) {
            if (row[v] > row[best]) best = v;
        }
        pred[static_cast<size_t>(r)] = static_cast<uint16_t>(best);
    }
    return pred;
}

std::vector<double> sequence_nll(const ARModel<float>& model, const std::vector<uint16_t>& seqs,
                                 const std::vector<int64_t>& labels) {
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t N = model.cfg.seq_len;
    const int64_t V = model.cfg.vocab_size;
    ForwardCache<float> cache;
    model.forward(to_model_inputs(seqs, B, N), labels, false, cache);
    std::vector<double> out(static_cast<size_t>(B), 0.0);
    std::vector<float> logp(static_cast<size_t>(V));
    for (int64_t b = 0; b < B; ++b) {
        double nll = 0.0;
        for (int64_t p = 0; p < N; ++p) {
            log_softmax_row(cache.logits.ptr() + (b * N + p) * V, logp.data(), V);
            nll -= static_cast<double>(logp[seqs[b * N + p]]);
        }
        out[static_cast<size_t>(b)] = nll / static_cast<double>(N);
    }
    return out;
}

double perplexity(const ARModel<float>& model, const std::vector<uint16_t>& seq, int64_t label) {
    const auto nll = sequence_nll(model, seq, {label});
    return std::exp(nll[0]);
}

double psnr(const ImageBatch& a, const ImageBatch& b) {
    if (a.B != b.B || a.H != b.H || a.W != b.W)
        throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

std::vector<double> psnr_per_image(const ImageBatch& a, const ImageBatch& b) {
    if (a.B != b.B || a.H != b.H || a.W != b.W)
        throw std::invalid_argument("psnr: shape mismatch");
    std::vector<double> out(static_cast<size_t>(a.B));
    const int64_t n = a.pixels_per_image();
    for (int64_t i = 0; i < a.B; ++i) {
        double mse = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(a.data[i * n + j]) -
                             static_cast<double>(b.data[i * n + j]);
            mse += d * d;
        }
        mse /= static_cast<double>(n);
        out[static_cast<size_t>(i)] =
            mse <= 0.0 ? kPsnrCapDb : std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
    }
    return out;
}

namespace {

// Channel-normalize each spatial vector, accumulate squared differences per
// image with a 1/(h*w) spatial mean.
void accumulate_layer_distance(const LatentGrid& fa, const LatentGrid& fb,
                               std::vector<double>& per_image) {
    const double inv_hw = 1.0 / static_cast<double>(fa.h * fa.w);
    std::vector<double> na(static_cast<size_t>(fa.c)), nb(static_cast<size_t>(fa.c));
    for (int64_t b = 0; b < fa.B; ++b) {
        double acc = 0.0;
        for (int64_t y = 0; y < fa.h; ++y) {
            for (int64_t x = 0; x < fa.w; ++x) {
                const float* va = fa.vec(b, y, x);
                const float* vb = fb.vec(b, y, x);
                double sa = 0.0, sb = 0.0;
                for (int64_t ch = 0; ch < fa.c; ++ch) {
                    sa += static_cast<double>(va[ch]) * va[ch];
                    sb += static_cast<double>(vb[ch]) * vb[ch];
                }
                sa = std::sqrt(sa) + 1e-10;
                sb = std::sqrt(sb) + 1e-10;
                for (int64_t ch = 0; ch < fa.c; ++ch) {
                    const double d = va[ch] / sa - vb[ch] / sb;
                    acc += d * d;
                }
            }
        }
        per_image[static_cast<size_t>(b)] += acc * inv_hw;
    }
}

}  // namespace

std::vector<double> perceptual_distance_per_image(const ImageBatch& a, const ImageBatch& b,
                                                  const PerceptualExtractor& extractor) {
    if (a.B != b.B || a.H != b.H || a.W != b.W)
        throw std::invalid_argument("perceptual_distance: shape mismatch");
    const auto fa = extractor.features(a);
    const auto fb = extractor.features(b);
    if (fa.empty() || fa.size() != fb.size())
        throw std::invalid_argument("perceptual_distance: extractor layer mismatch");
    std::vector<double> per_image(static_cast<size_t>(a.B), 0.0);
    for (size_t l = 0; l < fa.size(); ++l) {
        accumulate_layer_distance(fa[l], fb[l], per_image);
    }
    return per_image;
}

double perceptual_distance(const ImageBatch& a, const ImageBatch& b,
                           const PerceptualExtractor& extractor) {
    const auto per_image = perceptual_distance_per_image(a, b, extractor);
    double mean = 0.0;
    for (double v : per_image) mean += v;
    return mean / static_cast<double>(per_image.size());
}

namespace {

template <typename T>
CkaResult cka_impl(const Tensor<T>& X, const Tensor<T>& Y) {
    const int64_t n = X.dim(0);
    if (n < 2 || Y.dim(0) != n) throw std::invalid_argument("cka: need n >= 2 matching rows");
    const int64_t dx = X.dim(1), dy = Y.dim(1);

    // Column-center both; then <Kc,Lc>_F = |Xc^T Yc|_F^2 without forming Grams.
    std::vector<double> xc(static_cast<size_t>(n * dx)), yc(static_cast<size_t>(n * dy));
    for (int64_t j = 0; j < dx; ++j) {
        double m = 0.0;
        for (int64_t i = 0; i < n; ++i) m += static_cast<double>(X.at(i, j));
        m /= static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) xc[static_cast<size_t>(i * dx + j)] = X.at(i, j) - m;
    }
    for (int64_t j = 0; j < dy; ++j) {
        double m = 0.0;
        for (int64_t i = 0; i < n; ++i) m += static_cast<double>(Y.at(i, j));
        m /= static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) yc[static_cast<size_t>(i * dy + j)] = Y.at(i, j) - m;
    }

    auto cross_fro2 = [n](const std::vector<double>& a, int64_t da, const std::vector<double>& b,
                          int64_t db) {
        double acc = 0.0;
        for (int64_t p = 0; p < da; ++p) {
            for (int64_t q = 0; q < db; ++q) {
                double s = 0.0;
                for (int64_t i = 0; i < n; ++i)
                    s += a[static_cast<size_t>(i * da + p)] * b[static_cast<size_t>(i * db + q)];
                acc += s * s;
            }
        }
        return acc;
    };

    const double xy = cross_fro2(xc, dx, yc, dy);
    const double xx = cross_fro2(xc, dx, xc, dx);
    const double yy = cross_fro2(yc, dy, yc, dy);

    CkaResult res;
    const double denom = std::sqrt(xx) * std::sqrt(yy);
    if (denom < 1e-30) {
        res.degenerate = true;
        res.value = 0.0;
        return res;
    }
    res.value = xy / denom;
    return res;
}

}  // namespace

CkaResult cka(const Tensor<float>& X, const Tensor<float>& Y) { return cka_impl(X, Y); }
CkaResult cka(const Tensor<double>& X, const Tensor<double>& Y) { return cka_impl(X, Y); }

}  // namespace rear
