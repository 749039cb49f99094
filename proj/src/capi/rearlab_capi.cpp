#include "rearlab/rearlab.h"

#include <cmath>
#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "rearlab/checkpoint.hpp"
#include "rearlab/config.hpp"
#include "rearlab/errors.hpp"
#include "rearlab/metrics.hpp"
#include "rearlab/runner.hpp"
#include "rearlab/sampler.hpp"
#include "rearlab/train.hpp"
#include "rearlab/version.hpp"
#include "rearlab/vq_tokenizer.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

rearlab_status fail(rearlab_status st, const std::string& msg) {
    g_last_error = msg;
    return st;
}

template <typename Fn>
rearlab_status guard(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return REARLAB_OK;
    } catch (const std::invalid_argument& e) {
        return fail(REARLAB_ERR_USAGE, e.what());
    } catch (const rear::IntegrityError& e) {
        return fail(REARLAB_ERR_INTEGRITY, e.what());
    } catch (const std::exception& e) {
        return fail(REARLAB_ERR_RUNTIME, e.what());
    }
}

}  // namespace

struct rearlab_config {
    rear::RunConfig cfg;
};

struct rearlab_tokenizer {
    std::unique_ptr<rear::VQTokenizer> tok;
};

struct rearlab_model {
    std::unique_ptr<rear::ARModel<float>> model;
};

extern "C" {

const char* rearlab_version(void) { return rear::version_string(); }

const char* rearlab_last_error(void) { return g_last_error.c_str(); }

rearlab_config* rearlab_config_create(void) { return new rearlab_config(); }

void rearlab_config_destroy(rearlab_config* cfg) { delete cfg; }

rearlab_status rearlab_config_set(rearlab_config* cfg, const char* key, const char* value) {
    if (cfg == nullptr || key == nullptr || value == nullptr)
        return fail(REARLAB_ERR_USAGE, "config_set: null argument");
    return guard([&] { cfg->cfg.set(key, value); });
}

rearlab_status rearlab_config_load_file(rearlab_config* cfg, const char* path) {
    if (cfg == nullptr || path == nullptr)
        return fail(REARLAB_ERR_USAGE, "config_load_file: null argument");
    return guard([&] { cfg->cfg.load_file(path); });
}

rearlab_status rearlab_config_get(const rearlab_config* cfg, const char* key, char* buf,
                                  size_t buflen) {
    if (cfg == nullptr || key == nullptr || buf == nullptr || buflen == 0)
        return fail(REARLAB_ERR_USAGE, "config_get: null argument");
    return guard([&] {
        std::string value;
        switch (cfg->cfg.type_of(key)) {
            case rear::RunConfig::Type::Int:
                value = std::to_string(cfg->cfg.get_int(key));
                break;
            case rear::RunConfig::Type::Real:
                value = std::to_string(cfg->cfg.get_real(key));
                break;
            case rear::RunConfig::Type::Bool:
                value = cfg->cfg.get_bool(key) ? "true" : "false";
                break;
            case rear::RunConfig::Type::Str:
                value = cfg->cfg.get_str(key);
                break;
        }
        std::strncpy(buf, value.c_str(), buflen - 1);
        buf[buflen - 1] = '\0';
    });
}

#define REARLAB_RUN(name, fn)                                              \
    rearlab_status name(const rearlab_config* cfg) {                      \
        if (cfg == nullptr) return fail(REARLAB_ERR_USAGE, "null config"); \
        return guard([&] { fn(cfg->cfg); });                               \
    }

REARLAB_RUN(rearlab_run_tokenizer_train, rear::cmd_tokenizer_train)
REARLAB_RUN(rearlab_run_tokenize, rear::cmd_tokenize)
REARLAB_RUN(rearlab_run_ar_train, rear::cmd_ar_train)
REARLAB_RUN(rearlab_run_sample, rear::cmd_sample)
REARLAB_RUN(rearlab_run_diagnose, rear::cmd_diagnose)
REARLAB_RUN(rearlab_run_report, rear::cmd_report)

#undef REARLAB_RUN

rearlab_status rearlab_tokenizer_open(const char* ckpt_path, rearlab_tokenizer** out) {
    if (ckpt_path == nullptr || out == nullptr)
        return fail(REARLAB_ERR_USAGE, "tokenizer_open: null argument");
    return guard([&] {
        auto handle = std::make_unique<rearlab_tokenizer>();
        handle->tok = rear::load_tokenizer_checkpoint(ckpt_path);
        *out = handle.release();
    });
}

void rearlab_tokenizer_close(rearlab_tokenizer* tok) { delete tok; }

rearlab_status rearlab_tokenizer_info(const rearlab_tokenizer* tok, int64_t* K, int64_t* c,
                                      int64_t* grid, int64_t* image_size) {
    if (tok == nullptr) return fail(REARLAB_ERR_USAGE, "tokenizer_info: null handle");
    const auto& cfg = tok->tok->config();
    if (K != nullptr) *K = cfg.codebook_size;
    if (c != nullptr) *c = cfg.embed_dim;
    if (grid != nullptr) *grid = cfg.grid();
    if (image_size != nullptr) *image_size = cfg.image_size;
    return REARLAB_OK;
}

rearlab_status rearlab_tokenizer_encode(const rearlab_tokenizer* tok, const float* pixels,
                                        int64_t batch, uint16_t* tokens_out) {
    if (tok == nullptr || pixels == nullptr || tokens_out == nullptr || batch < 1)
        return fail(REARLAB_ERR_USAGE, "tokenizer_encode: bad argument");
    return guard([&] {
        const auto& cfg = tok->tok->config();
        rear::ImageBatch images(batch, cfg.image_size, cfg.image_size);
        std::memcpy(images.data.data(), pixels, images.data.size() * sizeof(float));
        const rear::TokenGrid grid = tok->tok->tokenize(images, {});
        std::memcpy(tokens_out, grid.indices.data(), grid.indices.size() * sizeof(uint16_t));
    });
}

rearlab_status rearlab_tokenizer_decode(const rearlab_tokenizer* tok, const uint16_t* tokens,
                                        int64_t batch, float* pixels_out) {
    if (tok == nullptr || tokens == nullptr || pixels_out == nullptr || batch < 1)
        return fail(REARLAB_ERR_USAGE, "tokenizer_decode: bad argument");
    return guard([&] {
        const auto& cfg = tok->tok->config();
        rear::TokenGrid grid(batch, cfg.grid(), cfg.grid());
        std::memcpy(grid.indices.data(), tokens, grid.indices.size() * sizeof(uint16_t));
        for (uint16_t t : grid.indices) {
            if (t >= cfg.codebook_size) throw std::invalid_argument("token index out of range");
        }
        const rear::ImageBatch images = tok->tok->decode_tokens(grid);
        std::memcpy(pixels_out, images.data.data(), images.data.size() * sizeof(float));
    });
}

rearlab_status rearlab_model_open(const char* ckpt_path, const char* tokenizer_ckpt,
                                  rearlab_model** out) {
    if (ckpt_path == nullptr || out == nullptr)
        return fail(REARLAB_ERR_USAGE, "model_open: null argument");
    return guard([&] {
        const rear::CheckpointContainer c = rear::load_checkpoint(ckpt_path);
        const json meta = json::parse(c.meta_json);
        const json& a = meta.at("arch");
        rear::ARConfig arch;
        arch.num_layers = a.at("num_layers").get<int64_t>();
        arch.hidden_dim = a.at("hidden_dim").get<int64_t>();
        arch.num_heads = a.at("num_heads").get<int64_t>();
        arch.vocab_size = a.at("vocab_size").get<int64_t>();
        arch.seq_len = a.at("seq_len").get<int64_t>();
        arch.num_classes = a.at("num_classes").get<int64_t>();
        arch.dropout_rate = a.at("dropout_rate").get<double>();
        arch.mlp_ratio = a.at("mlp_ratio").get<double>();
        arch.tap_shallow = a.at("tap_shallow").get<int64_t>();
        arch.tap_deep = a.at("tap_deep").get<int64_t>();
        arch.tap_pre_block = a.at("tap_pre_block").get<bool>();
        arch.head_hidden = a.at("head_hidden").get<int64_t>();
        arch.codebook_dim = a.at("codebook_dim").get<int64_t>();
        arch.tied_codebook = a.at("tied_codebook").get<bool>();

        rear::CodebookT<float> cb;
        const rear::CodebookT<float>* cbp = nullptr;
        if (arch.tied_codebook) {
            if (tokenizer_ckpt == nullptr)
                throw std::invalid_argument(
                    "model_open: tied-codebook model needs the tokenizer checkpoint");
            auto tok = rear::load_tokenizer_checkpoint(tokenizer_ckpt);
            cb = tok->codebook();
            cbp = &cb;
        }
        auto handle = std::make_unique<rearlab_model>();
        handle->model = std::make_unique<rear::ARModel<float>>(arch, cbp);
        rear::load_ar_params(*handle->model, c);
        *out = handle.release();
    });
}

void rearlab_model_close(rearlab_model* model) { delete model; }

rearlab_status rearlab_model_info(const rearlab_model* model, int64_t* layers, int64_t* hidden,
                                  int64_t* vocab, int64_t* seq_len, int64_t* num_classes,
                                  int64_t* params) {
    if (model == nullptr) return fail(REARLAB_ERR_USAGE, "model_info: null handle");
    const auto& cfg = model->model->cfg;
    if (layers != nullptr) *layers = cfg.num_layers;
    if (hidden != nullptr) *hidden = cfg.hidden_dim;
    if (vocab != nullptr) *vocab = cfg.vocab_size;
    if (seq_len != nullptr) *seq_len = cfg.seq_len;
    if (num_classes != nullptr) *num_classes = cfg.num_classes;
    if (params != nullptr) *params = model->model->count_parameters().total;
    return REARLAB_OK;
}

rearlab_status rearlab_model_sample(const rearlab_model* model, const int64_t* labels,
                                    int64_t batch, uint64_t seed, double guidance_scale,
                                    double guidance_power, uint16_t* tokens_out) {
    if (model == nullptr || labels == nullptr || tokens_out == nullptr || batch < 1)
        return fail(REARLAB_ERR_USAGE, "model_sample: bad argument");
    return guard([&] {
        rear::SampleConfig sc;
        sc.seed = seed;
        sc.guidance_scale = guidance_scale;
        sc.guidance_power = guidance_power;
        const std::vector<int64_t> lab(labels, labels + batch);
        const auto seqs = rear::sample(*model->model, lab, sc);
        std::memcpy(tokens_out, seqs.data(), seqs.size() * sizeof(uint16_t));
    });
}

rearlab_status rearlab_metric_psnr(const float* a, const float* b, int64_t count, double* out) {
    if (a == nullptr || b == nullptr || out == nullptr || count < 1)
        return fail(REARLAB_ERR_USAGE, "metric_psnr: bad argument");
    return guard([&] {
        double mse = 0.0;
        for (int64_t i = 0; i < count; ++i) {
            const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
            mse += d * d;
        }
        mse /= static_cast<double>(count);
        *out = mse <= 0.0 ? rear::kPsnrCapDb
                          : std::min(rear::kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
    });
}

rearlab_status rearlab_metric_cka(const float* x, int64_t n, int64_t dx, const float* y,
                                  int64_t dy, double* out) {
    if (x == nullptr || y == nullptr || out == nullptr)
        return fail(REARLAB_ERR_USAGE, "metric_cka: bad argument");
    return guard([&] {
        rear::Tensor<float> X({n, dx}), Y({n, dy});
        std::copy(x, x + n * dx, X.ptr());
        std::copy(y, y + n * dy, Y.ptr());
        *out = rear::cka(X, Y).value;
    });
}

}  // extern "C"
