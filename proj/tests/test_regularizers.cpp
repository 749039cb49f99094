#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rearlab/objective.hpp"
#include "rearlab/regularizers.hpp"
#include "test_stats_util.hpp"
#include "test_util.hpp"

using namespace rear;

TEST_CASE("truncated schedule hits the documented anchor points exactly") {
    NoiseSchedule s;  // annealed_truncated, level 1, truncation 3/4
    CHECK(s.value(0.0) == 1.0);
    CHECK(s.value(0.375) == 0.5);
    CHECK(s.value(0.75) == 0.0);
    CHECK(s.value(1.0) == 0.0);
}

TEST_CASE("schedule_value rejects t outside [0,1]") {
    NoiseSchedule s;
    CHECK_THROWS_AS(s.value(-0.01), std::invalid_argument);
    CHECK_THROWS_AS(s.value(1.01), std::invalid_argument);
}

TEST_CASE("every schedule kind is non-increasing in t") {
    for (NoiseKind kind : {NoiseKind::Fixed, NoiseKind::UniformRange, NoiseKind::AnnealedLinear,
                           NoiseKind::AnnealedTruncated}) {
        NoiseSchedule s;
        s.kind = kind;
        s.level = 0.8;
        double prev = s.value(0.0);
        for (int i = 1; i <= 100; ++i) {
            const double cur = s.value(static_cast<double>(i) / 100.0);
            CHECK(cur <= prev + 1e-15);
            CHECK(cur >= 0.0);
            CHECK(cur <= 1.0);
            prev = cur;
        }
    }
}

TEST_CASE("sample_epsilon: zero cap yields zero; fixed kind is constant") {
    Rng rng(1);
    NoiseSchedule trunc;  // zero beyond truncation
    for (int i = 0; i < 100; ++i) CHECK(sample_epsilon(trunc, 0.9, rng) == 0.0);

    NoiseSchedule fixed;
    fixed.kind = NoiseKind::Fixed;
    fixed.level = 0.25;
    for (int i = 0; i < 100; ++i) CHECK(sample_epsilon(fixed, rng.uniform(), rng) == 0.25);
}

TEST_CASE("sample_epsilon: uniform moments over 1e5 draws") {
    NoiseSchedule s;
    s.kind = NoiseKind::UniformRange;
    s.level = 1.0;
    Rng rng(7);
    const int n = 100000;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += sample_epsilon(s, 0.3, rng);
    mean /= n;
    const double sigma = 1.0 / std::sqrt(12.0 * n);
    CHECK(std::abs(mean - 0.5) < 3.0 * sigma);
}

TEST_CASE("corrupt: eps=0 is the identity") {
    Rng rng(3);
    auto seq = testutil::random_tokens(64, 256, 5);
    auto rec = corrupt(seq, 0.0, 256, rng);
    CHECK(rec.noisy == seq);
    for (auto m : rec.mask) CHECK(m == 0);
}

TEST_CASE("corrupt: record invariants tie noisy to mask and draws") {
    Rng rng(4);
    auto seq = testutil::random_tokens(1000, 64, 6);
    auto rec = corrupt(seq, 0.35, 64, rng);
    for (size_t i = 0; i < seq.size(); ++i) {
        if (rec.mask[i] == 0) {
            CHECK(rec.noisy[i] == seq[i]);
        } else {
            CHECK(rec.noisy[i] == rec.draws[i]);
        }
    }
}

TEST_CASE("corrupt: eps=1, K=4 agreement rate is about 1/4") {
    Rng rng(8);
    const int n = 100000;
    auto seq = testutil::random_tokens(n, 4, 9);
    auto rec = corrupt(seq, 1.0, 4, rng);
    int64_t agree = 0;
    for (int i = 0; i < n; ++i) agree += rec.noisy[i] == seq[i] ? 1 : 0;
    const double rate = static_cast<double>(agree) / n;
    const double sigma = std::sqrt(0.25 * 0.75 / n);
    CHECK(std::abs(rate - 0.25) < 3.0 * sigma);
}

TEST_CASE("corrupt: eps=0.5, K=256 changed fraction near analytic expectation") {
    Rng rng(10);
    const int n = 100000;
    auto seq = testutil::random_tokens(n, 256, 11);
    auto rec = corrupt(seq, 0.5, 256, rng);
    int64_t changed = 0;
    for (int i = 0; i < n; ++i) changed += rec.noisy[i] != seq[i] ? 1 : 0;
    const double expect = 0.5 * (255.0 / 256.0);
    const double sigma = std::sqrt(expect * (1.0 - expect) / n);
    CHECK(std::abs(static_cast<double>(changed) / n - expect) < 3.0 * sigma);
}

TEST_CASE("corrupt: replacement indicator is Bernoulli(eps) and values pass chi-square") {
    Rng rng(12);
    const int n = 100000;
    const int64_t K = 64;
    const double eps = 0.3;
    auto seq = testutil::random_tokens(n, K, 13);
    auto rec = corrupt(seq, eps, K, rng);
    int64_t flips = 0;
    std::vector<int64_t> counts(static_cast<size_t>(K), 0);
    for (int i = 0; i < n; ++i) {
        if (rec.mask[i]) {
            ++flips;
            counts[rec.draws[i]] += 1;
        }
    }
    const double sigma = std::sqrt(eps * (1.0 - eps) / n);
    CHECK(std::abs(static_cast<double>(flips) / n - eps) < 3.0 * sigma);
    const double stat = testutil::chi2_uniform_stat(counts, static_cast<double>(flips));
    CHECK(stat < testutil::chi2_quantile_99(K - 1));
}

TEST_CASE("ar_loss: uniform logits give ln K") {
    const int64_t V = 256;
    Tensor<float> logits({2, 4, V});
    auto targets = testutil::random_tokens(8, V, 14);
    CHECK(ar_loss(logits, targets) == doctest::Approx(std::log(256.0)).epsilon(1e-6));
}

TEST_CASE("ar_loss: saturated correct predictions give near-zero loss") {
    const int64_t V = 16;
    auto targets = testutil::random_tokens(8, V, 15);
    Tensor<float> logits({8, V});
    for (int64_t r = 0; r < 8; ++r) logits.at(r, targets[r]) = 1000.0f;
    CHECK(ar_loss(logits, targets) < 1e-3);
}

TEST_CASE("ar_loss matches an independent log-softmax + gather oracle") {
    const int64_t R = 32, V = 20;
    Rng rng(16);
    Tensor<float> logits({R, V});
    for (auto& v : logits.data) v = static_cast<float>(rng.normal() * 2.0);
    auto targets = testutil::random_tokens(R, V, 17);

    // independent oracle: direct exp/sum in double
    double oracle = 0.0;
    for (int64_t r = 0; r < R; ++r) {
        double denom = 0.0;
        for (int64_t v = 0; v < V; ++v) denom += std::exp(static_cast<double>(logits.at(r, v)));
        const double p = std::exp(static_cast<double>(logits.at(r, targets[r]))) / denom;
        oracle -= std::log(p);
    }
    oracle /= R;
    CHECK(ar_loss(logits, targets) == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("ar_loss gradient rows sum to zero and point from softmax to target") {
    const int64_t R = 4, V = 8;
    Rng rng(20);
    Tensor<float> logits({R, V});
    for (auto& v : logits.data) v = static_cast<float>(rng.normal());
    auto targets = testutil::random_tokens(R, V, 21);
    Tensor<float> d;
    ar_loss(logits, targets, &d);
    for (int64_t r = 0; r < R; ++r) {
        double sum = 0.0;
        for (int64_t v = 0; v < V; ++v) sum += d.at(r, v);
        CHECK(sum == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(d.at(r, targets[r]) < 0.0);
    }
}

TEST_CASE("cosine distance basics") {
    const float v[3] = {0.3f, -1.2f, 2.0f};
    float nv[3];
    for (int i = 0; i < 3; ++i) nv[i] = -v[i];
    CHECK(cosine_distance(v, v, 3) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(cosine_distance(v, nv, 3) == doctest::Approx(2.0).epsilon(1e-6));
    const float e1[2] = {1.0f, 0.0f};
    const float e2[2] = {0.0f, 1.0f};
    CHECK(cosine_distance(e1, e2, 2) == doctest::Approx(1.0));
}

namespace {

ARConfig reg_cfg() {
    ARConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.vocab_size = 8;
    cfg.seq_len = 6;
    cfg.num_classes = 2;
    cfg.dropout_rate = 0.0;
    cfg.tap_shallow = 0;
    cfg.tap_deep = 1;
    cfg.head_hidden = 8;
    cfg.codebook_dim = 4;
    return cfg;
}

}  // namespace

TEST_CASE("embedding regularizer bounds: equal targets 0, antiparallel 4") {
    ARConfig cfg = reg_cfg();
    ARModel<float> model(cfg);
    model.init_params(30);
    // all codebook entries identical, so the target is the same everywhere
    CodebookT<float> cb(cfg.vocab_size, cfg.codebook_dim);
    for (int64_t k = 0; k < cb.K; ++k) {
        for (int64_t j = 0; j < cb.c; ++j) cb.entry(k)[j] = static_cast<float>(j + 1);
    }
    // rig both heads to output exactly the target vector regardless of input
    for (ARModel<float>::ProjHead* h : {&model.proj_shallow, &model.proj_deep}) {
        h->w1.w.zero();
        h->b1.w.zero();
        h->w2.w.zero();
        for (int64_t j = 0; j < cfg.codebook_dim; ++j)
            h->b2.w.at(j) = static_cast<float>(j + 1);
    }
    const auto seq = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 31);
    ForwardCache<float> cache;
    auto out = model.forward(to_model_inputs(seq, 1, cfg.seq_len), {0}, false, cache);
    auto res = embedding_reg_loss(model, out, seq, 1, cb, 1.0, false);
    CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-5));

    // flip predictions to the antiparallel vector: both terms hit 2
    for (ARModel<float>::ProjHead* h : {&model.proj_shallow, &model.proj_deep}) {
        for (int64_t j = 0; j < cfg.codebook_dim; ++j)
            h->b2.w.at(j) = -static_cast<float>(j + 1);
    }
    auto res2 = embedding_reg_loss(model, out, seq, 1, cb, 1.0, false);
    CHECK(res2.loss == doctest::Approx(4.0).epsilon(1e-5));
    CHECK(res2.loss <= 4.0);
}

TEST_CASE("regularizer and NLL targets depend only on the clean sequence") {
    ARConfig cfg = reg_cfg();
    ARModel<float> model(cfg);
    model.init_params(33);
    auto cb = testutil::random_codebook<float>(cfg.vocab_size, cfg.codebook_dim, 34);
    // constant-output heads: reg loss is then a pure function of the targets
    for (ARModel<float>::ProjHead* h : {&model.proj_shallow, &model.proj_deep}) {
        h->w1.w.zero();
        h->b1.w.zero();
        h->w2.w.zero();
        for (int64_t j = 0; j < cfg.codebook_dim; ++j) h->b2.w.at(j) = 0.5f;
    }
    const auto clean = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 35);
    double reg_ref = -1.0;
    for (uint64_t s = 0; s < 4; ++s) {
        Rng rng(s, RngStream::Corruption);
        auto rec = corrupt(clean, 0.7, cfg.vocab_size, rng);
        ForwardCache<float> cache;
        auto out = model.forward(to_model_inputs(rec.noisy, 1, cfg.seq_len), {1}, false, cache);
        auto res = embedding_reg_loss(model, out, clean, 1, cb, 1.0, false);
        if (s == 0) {
            reg_ref = res.loss;
        } else {
            CHECK(res.loss == doctest::Approx(reg_ref).epsilon(1e-9));
        }
    }
}

TEST_CASE("total_loss composition and the vanilla degenerate case") {
    CHECK(total_loss(1.25, 0.5, 0.0) == 1.25);
    CHECK(total_loss(1.25, 0.5, 1.0) == 1.75);

    ARConfig cfg = reg_cfg();
    ARModel<float> model(cfg);
    model.init_params(40, false);
    auto cb = testutil::random_codebook<float>(cfg.vocab_size, cfg.codebook_dim, 41);
    const int64_t B = 2;
    auto clean = testutil::random_tokens(B * cfg.seq_len, cfg.vocab_size, 42);
    std::vector<int64_t> labels = {0, 1};

    // lambda = 0 and eps = 0: exactly the plain next-token objective
    Rng rng(43, RngStream::Corruption);
    auto rec = corrupt(clean, 0.0, cfg.vocab_size, rng);
    auto res = compute_objective(model, clean, rec.noisy, labels, cb, 0.0, false, 0, false);
    ForwardCache<float> cache;
    model.forward(to_model_inputs(clean, B, cfg.seq_len), labels, false, cache);
    CHECK(res.total == ar_loss(cache.logits, clean));
    CHECK(res.reg == 0.0);
}

TEST_CASE("no gradient reaches the codebook through the objective") {
    ARConfig cfg = reg_cfg();
    ARModel<double> model(cfg);
    testutil::randomize_all_params(model, 50);
    auto cb = testutil::random_codebook<double>(cfg.vocab_size, cfg.codebook_dim, 51);
    auto clean = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 52);
    model.zero_grad();
    compute_objective(model, clean, clean, {0}, cb, 1.0, true, 0, true);
    // the codebook is not a trainable parameter anywhere in the registry
    for (Param<double>* p : model.all_params()) {
        CHECK(p->name.find("codebook") == std::string::npos);
    }
    // and the targets it provides are treated as constants: perturbing a
    // parameter never writes back into cb
    auto snapshot = cb.entries;
    compute_objective(model, clean, clean, {0}, cb, 1.0, true, 0, true);
    CHECK(cb.entries == snapshot);
}
