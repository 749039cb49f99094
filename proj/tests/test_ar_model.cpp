#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>

#include "rearlab/ar_model.hpp"
#include "rearlab/objective.hpp"
#include "rearlab/regularizers.hpp"
#include "test_util.hpp"

using namespace rear;

namespace {

ARConfig tiny_cfg() {
    ARConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.vocab_size = 8;
    cfg.seq_len = 4;
    cfg.num_classes = 3;
    cfg.dropout_rate = 0.0;
    cfg.tap_shallow = 0;
    cfg.tap_deep = 1;
    cfg.head_hidden = 16;
    cfg.codebook_dim = 5;
    return cfg;
}

ARConfig small_cfg() {
    ARConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_dim = 32;
    cfg.num_heads = 4;
    cfg.vocab_size = 32;
    cfg.seq_len = 12;
    cfg.num_classes = 4;
    cfg.dropout_rate = 0.0;
    cfg.tap_shallow = 0;
    cfg.tap_deep = 2;
    cfg.head_hidden = 24;
    cfg.codebook_dim = 6;
    return cfg;
}

}  // namespace

TEST_CASE("forward shape contract and tap completeness") {
    ARConfig cfg = small_cfg();
    ARModel<float> model(cfg);
    model.init_params(1);
    const int64_t B = 2, N = cfg.seq_len;
    auto tokens = testutil::random_tokens(B * N, cfg.vocab_size, 7);
    std::vector<int64_t> labels = {0, 3};
    ForwardCache<float> cache;
    auto out = model.forward(tokens, labels, false, cache);
    CHECK(out.logits->shape == std::vector<int64_t>{B, N, cfg.vocab_size});
    CHECK(out.tapped.size() == 2);
    REQUIRE(out.tapped.count(cfg.tap_shallow) == 1);
    REQUIRE(out.tapped.count(cfg.tap_deep) == 1);
    CHECK(out.tapped.at(0)->shape == std::vector<int64_t>{B, N, cfg.hidden_dim});
    CHECK(all_finite(*out.logits));
}

TEST_CASE("forward rejects out-of-range tokens and labels") {
    ARConfig cfg = tiny_cfg();
    ARModel<float> model(cfg);
    model.init_params(1);
    std::vector<uint16_t> tokens(cfg.seq_len, 0);
    ForwardCache<float> cache;
    tokens[2] = static_cast<uint16_t>(cfg.vocab_size);  // one past the end
    CHECK_THROWS_AS(model.forward(tokens, {0}, false, cache), std::invalid_argument);
    tokens[2] = 0;
    CHECK_THROWS_AS(model.forward(tokens, {cfg.num_classes + 1}, false, cache),
                    std::invalid_argument);
    // null class itself is legal
    CHECK_NOTHROW(model.forward(tokens, {cfg.num_classes}, false, cache));
}

TEST_CASE("causality: perturbing a later input leaves earlier logits bit-identical") {
    ARConfig cfg = small_cfg();
    ARModel<float> model(cfg);
    model.init_params(3);
    const int64_t N = cfg.seq_len, V = cfg.vocab_size;
    auto tokens = testutil::random_tokens(N, V, 11);
    std::vector<int64_t> labels = {1};
    ForwardCache<float> ca, cb;
    model.forward(tokens, labels, false, ca);
    const int64_t i = 5;
    auto perturbed = tokens;
    for (int64_t j = i + 1; j < N; ++j) perturbed[j] = static_cast<uint16_t>((tokens[j] + 3) % V);
    model.forward(perturbed, labels, false, cb);
    for (int64_t p = 0; p <= i; ++p) {
        for (int64_t v = 0; v < V; ++v) {
            CHECK(ca.logits.at(0, p, v) == cb.logits.at(0, p, v));
        }
    }
    // and the perturbation is actually visible somewhere later
    bool changed = false;
    for (int64_t p = i + 1; p < N && !changed; ++p)
        for (int64_t v = 0; v < V; ++v)
            if (ca.logits.at(0, p, v) != cb.logits.at(0, p, v)) changed = true;
    CHECK(changed);
}

TEST_CASE("eval-mode determinism") {
    ARConfig cfg = small_cfg();
    cfg.dropout_rate = 0.1;  // must not fire in eval mode
    ARModel<float> model(cfg);
    model.init_params(5);
    auto tokens = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 13);
    ForwardCache<float> ca, cb;
    model.forward(tokens, {2}, false, ca, 111);
    model.forward(tokens, {2}, false, cb, 222);
    CHECK(ca.logits.data == cb.logits.data);
}

TEST_CASE("train-mode dropout is seeded and reproducible") {
    ARConfig cfg = small_cfg();
    cfg.dropout_rate = 0.2;
    ARModel<float> model(cfg);
    model.init_params(5, /*adaln_zero=*/false);
    auto tokens = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 13);
    ForwardCache<float> ca, cb, cc;
    model.forward(tokens, {2}, true, ca, 42);
    model.forward(tokens, {2}, true, cb, 42);
    model.forward(tokens, {2}, true, cc, 43);
    CHECK(ca.logits.data == cb.logits.data);
    CHECK(ca.logits.data != cc.logits.data);
}

TEST_CASE("label conditioning changes logits") {
    ARConfig cfg = small_cfg();
    ARModel<float> model(cfg);
    model.init_params(9);
    auto tokens = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 17);
    ForwardCache<float> ca, cb;
    model.forward(tokens, {0}, false, ca);
    model.forward(tokens, {1}, false, cb);
    CHECK(ca.logits.data != cb.logits.data);
}

TEST_CASE("qk-norm: attention invariant to positive rescaling of q/k projections") {
    ARConfig cfg = small_cfg();
    ARModel<float> model(cfg);
    model.init_params(21);
    auto tokens = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 23);
    ForwardCache<float> ca, cb;
    model.forward(tokens, {1}, false, ca);
    const int64_t H = cfg.hidden_dim;
    for (auto& blk : model.blocks) {
        // scale the q and k output columns of the qkv projection
        for (int64_t r = 0; r < H; ++r) {
            for (int64_t c = 0; c < 2 * H; ++c) blk.qkv_w.w.at(r, c) *= 3.5f;
        }
        for (int64_t c = 0; c < 2 * H; ++c) blk.qkv_b.w.at(c) *= 3.5f;
    }
    model.forward(tokens, {1}, false, cb);
    for (int64_t i = 0; i < ca.logits.numel(); ++i) {
        CHECK(ca.logits.at(i) == doctest::Approx(cb.logits.at(i)).epsilon(1e-3));
    }
}

TEST_CASE("taps do not alter logits") {
    ARConfig cfg = small_cfg();
    ARModel<float> a(cfg);
    a.init_params(31);
    ARConfig cfg2 = cfg;
    cfg2.tap_shallow = 1;
    cfg2.tap_deep = 2;
    ARModel<float> b(cfg2);
    b.init_params(31);  // same seed, same parameter shapes -> same weights
    auto tokens = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 37);
    ForwardCache<float> ca, cb;
    a.forward(tokens, {0}, false, ca);
    b.forward(tokens, {0}, false, cb);
    CHECK(ca.logits.data == cb.logits.data);
}

TEST_CASE("count_parameters matches a hand-summed layer formula") {
    ARConfig cfg = small_cfg();
    ARModel<float> model(cfg);
    const int64_t H = cfg.hidden_dim, V = cfg.vocab_size, N = cfg.seq_len;
    const int64_t M = cfg.mlp_hidden(), hd = cfg.head_dim(), C = cfg.codebook_dim;
    const int64_t P = cfg.head_hidden;
    const int64_t per_block = (H * 6 * H + 6 * H)   // adaLN modulation
                              + (H * 3 * H + 3 * H) // qkv
                              + 2 * hd              // qk-norm gains
                              + (H * H + H)         // attention out
                              + (H * M + M) + (M * H + H);  // mlp
    const int64_t backbone = V * H + (cfg.num_classes + 1) * H + N * H
                             + cfg.num_layers * per_block
                             + (H * 2 * H + 2 * H)  // final modulation
                             + (H * V + V);         // prediction head
    const int64_t heads = 2 * ((H * P + P) + (P * C + C));
    auto counts = model.count_parameters();
    CHECK(counts.backbone == backbone);
    CHECK(counts.proj_heads == heads);
    CHECK(counts.total == backbone + heads);
}

TEST_CASE("count_parameters: doubling layers strictly increases the count") {
    ARConfig a = small_cfg();
    ARConfig b = a;
    b.num_layers *= 2;
    b.tap_deep = ARConfig::default_tap_deep(b.num_layers);
    ARModel<float> ma(a), mb(b);
    CHECK(mb.count_parameters().total > ma.count_parameters().total);
}

TEST_CASE("projection head: zero weights give zero output, correct dims") {
    ARConfig cfg = tiny_cfg();
    ARModel<float> model(cfg);
    // params default to zero before init
    Tensor<float> f({3, cfg.hidden_dim});
    for (int64_t i = 0; i < f.numel(); ++i) f.at(i) = 0.7f * static_cast<float>(i % 5);
    Tensor<float> hidden, out;
    model.project(f, model.proj_shallow, hidden, out);
    CHECK(out.shape == std::vector<int64_t>{3, cfg.codebook_dim});
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == 0.0f);
}

TEST_CASE("projection head gradient matches finite differences") {
    ARConfig cfg = tiny_cfg();
    ARModel<double> model(cfg);
    model.init_params(77, /*adaln_zero=*/false);
    Rng rng(123);
    const int64_t R = 6;
    Tensor<double> f({R, cfg.hidden_dim});
    for (auto& v : f.data) v = rng.normal();
    Tensor<double> target({R, cfg.codebook_dim});
    for (auto& v : target.data) v = rng.normal();

    auto loss_fn = [&]() {
        Tensor<double> hidden, out;
        model.project(f, model.proj_shallow, hidden, out);
        double l = 0.0;
        for (int64_t i = 0; i < out.numel(); ++i) {
            const double d = out.at(i) - target.at(i);
            l += 0.5 * d * d;
        }
        return l;
    };

    // analytic
    model.zero_grad();
    Tensor<double> hidden, out;
    model.project(f, model.proj_shallow, hidden, out);
    Tensor<double> dout({R, cfg.codebook_dim});
    for (int64_t i = 0; i < out.numel(); ++i) dout.at(i) = out.at(i) - target.at(i);
    Tensor<double> df;
    model.project_backward(f, hidden, dout, model.proj_shallow, df);

    double worst = 0.0;
    for (Param<double>* p :
         {&model.proj_shallow.w1, &model.proj_shallow.b1, &model.proj_shallow.w2,
          &model.proj_shallow.b2}) {
        for (int64_t i = 0; i < p->w.numel(); ++i) {
            const double saved = p->w.at(i);
            p->w.at(i) = saved + 1e-6;
            const double lp = loss_fn();
            p->w.at(i) = saved - 1e-6;
            const double lm = loss_fn();
            p->w.at(i) = saved;
            const double num = (lp - lm) / 2e-6;
            const double ana = p->g.at(i);
            worst = std::max(worst,
                             std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("full objective gradient vs central differences (2 layers, hidden 8, K=8, N=4)") {
    ARConfig cfg = tiny_cfg();
    auto cb = testutil::random_codebook<double>(cfg.vocab_size, cfg.codebook_dim, 99);
    ARModel<double> model(cfg);
    testutil::randomize_all_params(model, 55);

    const int64_t B = 2, N = cfg.seq_len;
    auto clean = testutil::random_tokens(B * N, cfg.vocab_size, 5);
    Rng crng(6, RngStream::Corruption);
    std::vector<uint16_t> noisy(clean);
    {
        auto rec = corrupt(clean, 0.3, cfg.vocab_size, crng);
        noisy = rec.noisy;
    }
    std::vector<int64_t> labels = {0, 2};

    model.zero_grad();
    auto res = compute_objective(model, clean, noisy, labels, cb, 1.0, true, 0, true);
    CHECK(res.total == doctest::Approx(res.ar + res.reg));
    CHECK(res.reg >= 0.0);
    CHECK(res.reg <= 4.0);

    auto loss_fn = [&]() {
        return compute_objective(model, clean, noisy, labels, cb, 1.0, true, 0, false).total;
    };
    const double worst = testutil::max_grad_rel_error(model, std::function<double()>(loss_fn),
                                                      1e-5);
    CHECK(worst < 1e-3);
}

TEST_CASE("objective gradient with tied codebook head") {
    ARConfig cfg = tiny_cfg();
    cfg.tied_codebook = true;
    auto cb = testutil::random_codebook<double>(cfg.vocab_size, cfg.codebook_dim, 17);
    ARModel<double> model(cfg, &cb);
    testutil::randomize_all_params(model, 56);

    const int64_t B = 1, N = cfg.seq_len;
    auto clean = testutil::random_tokens(B * N, cfg.vocab_size, 8);
    std::vector<int64_t> labels = {1};

    model.zero_grad();
    compute_objective(model, clean, clean, labels, cb, 1.0, true, 0, true);
    auto loss_fn = [&]() {
        return compute_objective(model, clean, clean, labels, cb, 1.0, true, 0, false).total;
    };
    const double worst = testutil::max_grad_rel_error(model, std::function<double()>(loss_fn),
                                                      1e-5);
    CHECK(worst < 1e-3);

    // the codebook itself must not move: it is not even a parameter
    for (Param<double>* p : model.all_params()) CHECK(p->name != "codebook");
}

TEST_CASE("pre-block tap mode exposes the embedding stream at layer 0") {
    ARConfig cfg = small_cfg();
    cfg.tap_pre_block = true;
    ARModel<float> model(cfg);
    model.init_params(61);
    auto tokens = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 67);
    ForwardCache<float> cache;
    auto out = model.forward(tokens, {0}, false, cache);
    // pre-block tap at layer 0 is the embedded input itself
    CHECK(out.tapped.at(0)->data == cache.h0.data);
}
