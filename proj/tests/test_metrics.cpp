#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rearlab/metrics.hpp"
#include "rearlab/vq_tokenizer.hpp"
#include "test_util.hpp"

using namespace rear;

TEST_CASE("ctr basics") {
    CHECK(ctr({1, 2, 3, 4}, {1, 2, 3, 4}) == 1.0);
    CHECK(ctr({5, 6}, {1, 2}) == 0.0);
    CHECK(ctr({1, 2, 3, 4}, {1, 2, 0, 0}) == 0.5);
    CHECK_THROWS_AS(ctr({1, 2}, {1}), std::invalid_argument);
}

namespace {

ARConfig metric_cfg(int64_t V) {
    ARConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = V;
    cfg.seq_len = 8;
    cfg.num_classes = 3;
    cfg.dropout_rate = 0.0;
    cfg.tap_shallow = 0;
    cfg.tap_deep = 1;
    cfg.head_hidden = 8;
    cfg.codebook_dim = 4;
    return cfg;
}

}  // namespace

TEST_CASE("perplexity of the uniform predictor equals K") {
    const int64_t V = 256;
    ARConfig cfg = metric_cfg(V);
    ARModel<float> model(cfg);  // all-zero weights -> uniform logits
    auto seq = testutil::random_tokens(cfg.seq_len, V, 3);
    CHECK(perplexity(model, seq, 0) ==
          doctest::Approx(static_cast<double>(V)).epsilon(1e-4));
}

TEST_CASE("perplexity of a saturated predictor approaches 1") {
    ARConfig cfg = metric_cfg(16);
    ARModel<float> model(cfg);
    model.head_b.w.at(3) = 60.0f;  // probability ~1 on token 3 everywhere
    std::vector<uint16_t> seq(cfg.seq_len, 3);
    CHECK(perplexity(model, seq, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ln(perplexity) equals mean teacher-forced NLL") {
    ARConfig cfg = metric_cfg(32);
    ARModel<float> model(cfg);
    model.init_params(5, false);
    auto seq = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 7);
    const double ppl = perplexity(model, seq, 1);
    const double nll = sequence_nll(model, seq, {1})[0];
    CHECK(std::log(ppl) == doctest::Approx(nll).epsilon(1e-6));
}

TEST_CASE("psnr: sentinel, zero dB, and the analytic quarter case") {
    ImageBatch a(1, 8, 8), b(1, 8, 8);
    CHECK(psnr(a, a) == 99.0);
    for (auto& v : b.data) v = 1.0f;  // MSE = 1 = L^2
    CHECK(psnr(a, b) == doctest::Approx(0.0).epsilon(1e-9));
    for (auto& v : b.data) v = 0.5f;  // constant difference L/2
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
    ImageBatch c(1, 4, 4);
    CHECK_THROWS_AS(psnr(a, c), std::invalid_argument);
}

TEST_CASE("perceptual distance: identity, symmetry, monotone in noise amplitude") {
    TokenizerConfig tc;
    tc.image_size = 16;
    tc.downsample = 4;
    tc.codebook_size = 16;
    tc.embed_dim = 4;
    tc.base_channels = 8;
    tc.seed = 11;
    VQTokenizer tok(tc);
    TokenizerPerceptualExtractor ex(tok);

    Rng rng(13);
    const int64_t B = 100;
    ImageBatch base(B, 16, 16);
    for (auto& v : base.data) v = static_cast<float>(rng.uniform());

    CHECK(perceptual_distance(base, base, ex) == 0.0);

    double prev = 0.0;
    for (double amp : {0.05, 0.1, 0.2}) {
        ImageBatch noisy = base;
        Rng nrng(17);
        for (auto& v : noisy.data) {
            v = std::min(1.0f, std::max(0.0f, v + static_cast<float>(nrng.uniform(-amp, amp))));
        }
        const double d = perceptual_distance(base, noisy, ex);
        const double d_sym = perceptual_distance(noisy, base, ex);
        CHECK(d == doctest::Approx(d_sym).epsilon(1e-9));
        CHECK(d >= prev);
        prev = d;
    }
    CHECK(prev > 0.0);
}

namespace {

// Direct-formula CKA oracle: explicit centering matrix, explicit Gram
// matrices, Frobenius products. Deliberately the slow textbook route.
double cka_oracle(const Tensor<double>& X, const Tensor<double>& Y) {
    const int64_t n = X.dim(0);
    auto gram = [n](const Tensor<double>& A) {
        std::vector<double> K(static_cast<size_t>(n * n), 0.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (int64_t d = 0; d < A.dim(1); ++d) s += A.at(i, d) * A.at(j, d);
                K[static_cast<size_t>(i * n + j)] = s;
            }
        return K;
    };
    auto center = [n](const std::vector<double>& K) {
        // H = I - 11^T/n, out = H K H
        std::vector<double> H(static_cast<size_t>(n * n), -1.0 / static_cast<double>(n));
        for (int64_t i = 0; i < n; ++i) H[static_cast<size_t>(i * n + i)] += 1.0;
        std::vector<double> tmp(static_cast<size_t>(n * n), 0.0);
        std::vector<double> out(static_cast<size_t>(n * n), 0.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t k = 0; k < n; ++k)
                for (int64_t j = 0; j < n; ++j)
                    tmp[static_cast<size_t>(i * n + j)] +=
                        H[static_cast<size_t>(i * n + k)] * K[static_cast<size_t>(k * n + j)];
        for (int64_t i = 0; i < n; ++i)
            for (int64_t k = 0; k < n; ++k)
                for (int64_t j = 0; j < n; ++j)
                    out[static_cast<size_t>(i * n + j)] +=
                        tmp[static_cast<size_t>(i * n + k)] * H[static_cast<size_t>(k * n + j)];
        return out;
    };
    const auto Kc = center(gram(X));
    const auto Lc = center(gram(Y));
    double dot = 0.0, nk = 0.0, nl = 0.0;
    for (size_t i = 0; i < Kc.size(); ++i) {
        dot += Kc[i] * Lc[i];
        nk += Kc[i] * Kc[i];
        nl += Lc[i] * Lc[i];
    }
    return dot / (std::sqrt(nk) * std::sqrt(nl));
}

}  // namespace

TEST_CASE("cka: self-similarity, scaling, and orthogonal invariance") {
    Rng rng(19);
    const int64_t n = 24, d = 6;
    Tensor<float> X({n, d});
    for (auto& v : X.data) v = static_cast<float>(rng.normal());
    CHECK(cka(X, X).value == doctest::Approx(1.0).epsilon(1e-6));

    Tensor<float> Xs({n, d});
    for (int64_t i = 0; i < X.numel(); ++i) Xs.at(i) = 2.75f * X.at(i);
    CHECK(cka(X, Xs).value == doctest::Approx(1.0).epsilon(1e-6));

    // random orthogonal Q by Gram-Schmidt
    Tensor<double> Q({d, d});
    {
        Rng qr(23);
        std::vector<std::vector<double>> cols;
        for (int64_t c = 0; c < d; ++c) {
            std::vector<double> v(static_cast<size_t>(d));
            for (auto& x : v) x = qr.normal();
            for (const auto& u : cols) {
                double dp = 0.0;
                for (int64_t i = 0; i < d; ++i) dp += v[i] * u[i];
                for (int64_t i = 0; i < d; ++i) v[i] -= dp * u[i];
            }
            double nv = 0.0;
            for (double x : v) nv += x * x;
            nv = std::sqrt(nv);
            for (auto& x : v) x /= nv;
            cols.push_back(v);
            for (int64_t r = 0; r < d; ++r) Q.at(r, c) = v[static_cast<size_t>(r)];
        }
    }
    Tensor<float> XQ({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (int64_t k = 0; k < d; ++k) s += X.at(i, k) * Q.at(k, j);
            XQ.at(i, j) = static_cast<float>(s);
        }
    CHECK(cka(X, XQ).value == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("cka: 4x2 hand case matches the direct-formula oracle to 1e-8") {
    Tensor<double> X({4, 2});
    Tensor<double> Y({4, 2});
    const double xv[8] = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 0.1, -2.0};
    const double yv[8] = {1.0, 0.5, -0.5, 2.0, 0.3, -1.25, -0.4, 0.8};
    std::copy(xv, xv + 8, X.data.begin());
    std::copy(yv, yv + 8, Y.data.begin());
    const double got = cka(X, Y).value;
    const double want = cka_oracle(X, Y);
    CHECK(std::abs(got - want) < 1e-8);
    // symmetry
    CHECK(std::abs(cka(X, Y).value - cka(Y, X).value) < 1e-8);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
}

TEST_CASE("cka: constant features are flagged degenerate") {
    Tensor<float> X({5, 3});
    X.fill(0.7f);
    Tensor<float> Y({5, 2});
    Rng rng(29);
    for (auto& v : Y.data) v = static_cast<float>(rng.normal());
    auto res = cka(X, Y);
    CHECK(res.degenerate);
    CHECK(res.value == 0.0);
    CHECK_THROWS_AS(cka(Tensor<float>({1, 2}), Tensor<float>({1, 2})), std::invalid_argument);
}

TEST_CASE("teacher-forced predictions and ctr round trip") {
    ARConfig cfg = metric_cfg(16);
    ARModel<float> model(cfg);
    model.init_params(31, false);
    const int64_t B = 3;
    auto seqs = testutil::random_tokens(B * cfg.seq_len, cfg.vocab_size, 33);
    auto preds = teacher_forced_predictions(model, seqs, {0, 1, 2});
    REQUIRE(preds.size() == seqs.size());
    const double c = ctr(preds, seqs);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
}
