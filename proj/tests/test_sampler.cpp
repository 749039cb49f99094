#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rearlab/sampler.hpp"
#include "test_util.hpp"

using namespace rear;

namespace {

ARConfig sampler_cfg() {
    ARConfig cfg;
    cfg.num_layers = 3;
    cfg.hidden_dim = 32;
    cfg.num_heads = 4;
    cfg.vocab_size = 24;
    cfg.seq_len = 16;
    cfg.num_classes = 4;
    cfg.dropout_rate = 0.0;
    cfg.tap_shallow = 0;
    cfg.tap_deep = 2;
    cfg.head_hidden = 16;
    cfg.codebook_dim = 4;
    return cfg;
}

}  // namespace

TEST_CASE("cfg_scale_at: endpoints and midpoint") {
    const int64_t N = 64;
    for (double p : {0.5, 1.0, 2.0, 2.75}) {
        CHECK(cfg_scale_at(N - 1, N, 4.0, p) == doctest::Approx(4.0).epsilon(1e-12));
        for (int64_t i = 0; i < N; ++i) {
            CHECK(cfg_scale_at(i, N, 1.0, p) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    // p=1, i+1 = N/2: cos(pi/2) = 0
    CHECK(cfg_scale_at(N / 2 - 1, N, 5.0, 1.0) == doctest::Approx(1.0 + 4.0 / 2.0));
}

TEST_CASE("cfg_scale_at is non-decreasing in the step index") {
    const int64_t N = 64;
    for (double p : {0.5, 1.0, 2.0}) {
        double prev = 0.0;
        for (int64_t i = 0; i < N; ++i) {
            const double s = cfg_scale_at(i, N, 7.5, p);
            CHECK(s >= prev - 1e-12);
            prev = s;
        }
    }
}

TEST_CASE("guided_logits combination rule") {
    const int64_t V = 8;
    std::vector<float> c(V), u(V), out(V);
    Rng rng(1);
    for (auto& v : c) v = static_cast<float>(rng.normal());
    for (auto& v : u) v = static_cast<float>(rng.normal());
    guided_logits(c.data(), u.data(), 1.0, out.data(), V);
    CHECK(out == c);
    guided_logits(c.data(), u.data(), 0.0, out.data(), V);
    CHECK(out == u);
    guided_logits(c.data(), c.data(), 3.7, out.data(), V);
    for (int64_t v = 0; v < V; ++v) CHECK(out[v] == doctest::Approx(c[v]));
}

TEST_CASE("sample: deterministic under a seed, tokens in range") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(2, false);
    SampleConfig sc;
    sc.seed = 7;
    auto a = sample(model, {1, 2}, sc);
    auto b = sample(model, {1, 2}, sc);
    CHECK(a == b);
    for (auto t : a) CHECK(t < cfg.vocab_size);
    sc.seed = 8;
    CHECK(sample(model, {1, 2}, sc) != a);
}

TEST_CASE("a sequence's draws depend on its slot, not on batch composition") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(2, false);
    SampleConfig sc;
    sc.seed = 19;
    auto three = sample(model, {1, 2, 3}, sc);
    auto two = sample(model, {1, 2}, sc);
    const auto slot1_of3 = std::vector<uint16_t>(three.begin() + cfg.seq_len,
                                                 three.begin() + 2 * cfg.seq_len);
    const auto slot1_of2 =
        std::vector<uint16_t>(two.begin() + cfg.seq_len, two.begin() + 2 * cfg.seq_len);
    CHECK(slot1_of3 == slot1_of2);
}

TEST_CASE("kv-cache and cache-free decoding agree (with CFG)") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(3, false);
    SampleConfig sc;
    sc.seed = 11;
    sc.guidance_scale = 4.0;
    sc.guidance_power = 2.0;
    auto res = sample_both_paths(model, 2, sc);
    REQUIRE(res.cached_tokens.size() == static_cast<size_t>(cfg.seq_len));
    CHECK(res.cached_tokens == res.uncached_tokens);
    REQUIRE(res.cached.size() == res.uncached.size());
    for (size_t i = 0; i < res.cached.size(); ++i) {
        const double a = res.cached[i], b = res.uncached[i];
        CHECK(std::abs(a - b) <= 1e-4 * std::max({std::abs(a), std::abs(b), 1.0}));
    }
}

TEST_CASE("batched sample equals cache-free batched sample") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(4, false);
    SampleConfig sc;
    sc.seed = 13;
    sc.guidance_scale = 2.0;
    sc.guidance_power = 1.5;
    CHECK(sample(model, {0, 1, 2}, sc) == sample_nocache(model, {0, 1, 2}, sc));
}

TEST_CASE("context mask: full mask reproduces ground truth exactly") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(5, false);
    auto gt = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 6);
    SampleConfig sc;
    sc.seed = 17;
    std::vector<bool> all(cfg.seq_len, true);
    CHECK(decode_with_context_mask(model, gt, all, 1, sc) == gt);
}

TEST_CASE("context mask: empty mask equals free-running sampling under one seed") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(5, false);
    auto gt = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 6);
    SampleConfig sc;
    sc.seed = 23;
    std::vector<bool> none(cfg.seq_len, false);
    CHECK(decode_with_context_mask(model, gt, none, 1, sc) == sample(model, {1}, sc));
}

TEST_CASE("context mask: masked positions always match ground truth") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(5, false);
    auto gt = testutil::random_tokens(cfg.seq_len, cfg.vocab_size, 9);
    SampleConfig sc;
    sc.seed = 29;
    // front-loaded mask of floor(r*N) positions, r = 0.5
    std::vector<bool> front(cfg.seq_len, false);
    for (int64_t i = 0; i < cfg.seq_len / 2; ++i) front[i] = true;
    auto out = decode_with_context_mask(model, gt, front, 0, sc);
    for (int64_t i = 0; i < cfg.seq_len / 2; ++i) CHECK(out[i] == gt[i]);
}

TEST_CASE("sample config validation") {
    SampleConfig sc;
    sc.guidance_scale = 0.5;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    sc.guidance_scale = 2.0;
    sc.guidance_power = 0.0;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
    sc.guidance_power = 1.0;
    sc.temperature = 0.9;
    CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}

TEST_CASE("throughput: cached path at least as fast as cache-free") {
    ARConfig cfg = sampler_cfg();
    ARModel<float> model(cfg);
    model.init_params(14, false);
    SampleConfig sc;
    sc.seed = 31;
    auto rep = throughput_report(model, 4, sc, 3);
    CHECK(rep.images_per_sec_cached >= rep.images_per_sec_nocache);
    CHECK(rep.batch == 4);
    CHECK(rep.runs == 3);
    CHECK(!rep.hardware.empty());
    CHECK(rep.tokens_per_sec_cached ==
          doctest::Approx(rep.images_per_sec_cached * static_cast<double>(cfg.seq_len)));
}
