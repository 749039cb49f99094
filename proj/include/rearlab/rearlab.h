/* rearlab — visual autoregressive generation lab.
 *
 * C API over the C++ core: opaque handles, status-code returns, thread-local
 * error messages. Status values double as the CLI exit codes.
 */

#ifndef REARLAB_H
#define REARLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define REARLAB_API __declspec(dllexport)
#else
#define REARLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rearlab_status {
    REARLAB_OK = 0,
    REARLAB_ERR_USAGE = 1,     /* bad flags, keys, values, preconditions */
    REARLAB_ERR_RUNTIME = 2,   /* training/IO failures */
    REARLAB_ERR_INTEGRITY = 3, /* corrupt or mismatched artifacts */
} rearlab_status;

REARLAB_API const char* rearlab_version(void);

/* Message for the most recent failure on this thread; empty string if none. */
REARLAB_API const char* rearlab_last_error(void);

/* ---- configuration ----------------------------------------------------- */

typedef struct rearlab_config rearlab_config;

REARLAB_API rearlab_config* rearlab_config_create(void);
REARLAB_API void rearlab_config_destroy(rearlab_config* cfg);
REARLAB_API rearlab_status rearlab_config_set(rearlab_config* cfg, const char* key,
                                              const char* value);
REARLAB_API rearlab_status rearlab_config_load_file(rearlab_config* cfg, const char* path);
/* Copies the value of `key` into buf (NUL-terminated, truncating). */
REARLAB_API rearlab_status rearlab_config_get(const rearlab_config* cfg, const char* key,
                                              char* buf, size_t buflen);

/* ---- commands (one per CLI subcommand) --------------------------------- */

REARLAB_API rearlab_status rearlab_run_tokenizer_train(const rearlab_config* cfg);
REARLAB_API rearlab_status rearlab_run_tokenize(const rearlab_config* cfg);
REARLAB_API rearlab_status rearlab_run_ar_train(const rearlab_config* cfg);
REARLAB_API rearlab_status rearlab_run_sample(const rearlab_config* cfg);
REARLAB_API rearlab_status rearlab_run_diagnose(const rearlab_config* cfg);
REARLAB_API rearlab_status rearlab_run_report(const rearlab_config* cfg);

/* ---- tokenizer handle --------------------------------------------------- */

typedef struct rearlab_tokenizer rearlab_tokenizer;

REARLAB_API rearlab_status rearlab_tokenizer_open(const char* ckpt_path,
                                                  rearlab_tokenizer** out);
REARLAB_API void rearlab_tokenizer_close(rearlab_tokenizer* tok);
/* K, c, grid (tokens per side), image_size. Any pointer may be NULL. */
REARLAB_API rearlab_status rearlab_tokenizer_info(const rearlab_tokenizer* tok, int64_t* K,
                                                  int64_t* c, int64_t* grid,
                                                  int64_t* image_size);
/* pixels: batch*image_size*image_size*3 floats in [0,1], HWC interleaved.
 * tokens_out: batch*grid*grid u16. */
REARLAB_API rearlab_status rearlab_tokenizer_encode(const rearlab_tokenizer* tok,
                                                    const float* pixels, int64_t batch,
                                                    uint16_t* tokens_out);
REARLAB_API rearlab_status rearlab_tokenizer_decode(const rearlab_tokenizer* tok,
                                                    const uint16_t* tokens, int64_t batch,
                                                    float* pixels_out);

/* ---- model handle ------------------------------------------------------- */

typedef struct rearlab_model rearlab_model;

/* tokenizer_ckpt may be NULL unless the model ties its head to the codebook. */
REARLAB_API rearlab_status rearlab_model_open(const char* ckpt_path,
                                              const char* tokenizer_ckpt, rearlab_model** out);
REARLAB_API void rearlab_model_close(rearlab_model* model);
REARLAB_API rearlab_status rearlab_model_info(const rearlab_model* model, int64_t* layers,
                                              int64_t* hidden, int64_t* vocab,
                                              int64_t* seq_len, int64_t* num_classes,
                                              int64_t* params);
/* Free-running sampling: labels[batch], tokens_out[batch*seq_len]. */
REARLAB_API rearlab_status rearlab_model_sample(const rearlab_model* model,
                                                const int64_t* labels, int64_t batch,
                                                uint64_t seed, double guidance_scale,
                                                double guidance_power,
                                                uint16_t* tokens_out);

/* ---- metric helpers ------------------------------------------------------ */

/* PSNR in dB between two [count] float buffers in [0,1] (shape-agnostic). */
REARLAB_API rearlab_status rearlab_metric_psnr(const float* a, const float* b, int64_t count,
                                               double* out);
/* Linear CKA between X [n,dx] and Y [n,dy]; degenerate inputs score 0. */
REARLAB_API rearlab_status rearlab_metric_cka(const float* x, int64_t n, int64_t dx,
                                              const float* y, int64_t dy, double* out);

#ifdef __cplusplus
}
#endif

#endif /* REARLAB_H */
