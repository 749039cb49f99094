#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rearlab/ar_model.hpp"
#include "rearlab/dataset.hpp"
#include "rearlab/metrics.hpp"
#include "rearlab/sampler.hpp"
#include "rearlab/token_cache.hpp"
#include "rearlab/vq_tokenizer.hpp"

namespace rear {

// Structured results of a diagnostics run: per-condition records, each tagged
// with its seed, plus mean/std summaries.
struct DiagnosticsReport {
    std::string experiment;
    std::vector<std::string> conditions;

    struct Record {
        std::string condition;
        int64_t seed = 0;
        int64_t images = 0;
        std::map<std::string, double> metrics;
    };
    std::vector<Record> records;
    std::map<std::string, double> summary;  // "<condition>.<metric>.mean" / ".std"
    std::map<std::string, std::string> info;

    void finalize_summary();
    double summary_mean(const std::string& condition, const std::string& metric) const;

    std::string to_json() const;
    static DiagnosticsReport from_json(const std::string& text);
    std::string to_csv() const;
};

// Ground-truth images, their token sequences, and the tokenizer reconstruction
// that protocol metrics compare against (isolating generator error from
// tokenizer error).
struct EvalSet {
    ImageBatch images;
    ImageBatch recon;
    std::vector<uint16_t> seqs;  // [B,N]
    std::vector<int64_t> labels;

    int64_t count() const { return images.B; }
};

EvalSet build_eval_set(const VQTokenizer& tok, const Dataset& ds,
                       const std::vector<int64_t>& idx);

// Front-loaded vs uniformly interleaved ground-truth context at matched r.
DiagnosticsReport exposure_bias_experiment(const ARModel<float>& model, const VQTokenizer& tok,
                                           const EvalSet& eval,
                                           const std::vector<double>& r_grid, int64_t num_seeds,
                                           const SampleConfig& base_sc);

// Replace incorrect teacher-forced predictions with the incorrect token whose
// embedding is nearest the correct one; CTR is invariant by construction.
DiagnosticsReport embedding_replacement_experiment(const ARModel<float>& model,
                                                   const VQTokenizer& tok, const EvalSet& eval,
                                                   const std::vector<double>& rprime_grid,
                                                   int64_t num_seeds, uint64_t seed);

struct CKAProfile {
    std::string model_tag;
    std::vector<double> enc_cka;  // per layer, vs the current token's embedding
    std::vector<double> dec_cka;  // per layer, vs the next token's embedding
};

// Per-layer CKA between hidden states and looked-up codebook embeddings over
// at least max_positions sampled positions.
CKAProfile layer_similarity_profile(const ARModel<float>& model, const Codebook& cb,
                                    const std::vector<uint16_t>& seqs,
                                    const std::vector<int64_t>& labels, int64_t max_positions,
                                    const std::string& tag);

DiagnosticsReport cka_profile_report(const CKAProfile& profile);

// Teacher-forced CTR on {train, val} x {clean, noised} contexts.
DiagnosticsReport robustness_report(const ARModel<float>& model, const TokenCache& cache,
                                    const std::vector<int64_t>& train_idx,
                                    const std::vector<int64_t>& val_idx, double noise_level,
                                    int64_t num_seeds, int64_t max_seqs, uint64_t seed);

// Plain teacher-forced evaluation on one split.
DiagnosticsReport ctr_report(const ARModel<float>& model, const TokenCache& cache,
                             const std::vector<int64_t>& idx, int64_t max_seqs);

DiagnosticsReport throughput_diagnostics(const ARModel<float>& model, int64_t batch,
                                         const SampleConfig& sc);

// Precomputed nearest-incorrect table for every correct index.
std::vector<int64_t> nearest_incorrect_table(const Codebook& cb);

// Uniform-random subset mask of exactly m of n positions.
std::vector<bool> random_subset_mask(int64_t n, int64_t m, Rng& rng);

TokenGrid seqs_to_grid(const std::vector<uint16_t>& seqs, int64_t B, int64_t h, int64_t w,
                       const std::vector<int64_t>& labels);

}  // namespace rear
