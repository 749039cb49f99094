#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rearlab/ar_model.hpp"
#include "rearlab/checkpoint.hpp"
#include "rearlab/dataset.hpp"
#include "rearlab/regularizers.hpp"
#include "rearlab/token_cache.hpp"
#include "rearlab/vq_tokenizer.hpp"

namespace rear {

enum class TrainMode { Vanilla, NoiseOnly, EmbedOnly, Rear };

TrainMode train_mode_from_string(const std::string& s);
const char* train_mode_to_string(TrainMode m);

// The experiment matrix hinges on two gates: whether context corruption is
// live and whether the embedding regularizer carries weight.
struct TrainConfig {
    TrainMode mode = TrainMode::Rear;
    int64_t epochs = 100;
    int64_t batch = 64;
    double peak_lr = 3e-4;
    double final_lr = 1e-5;
    double warmup_frac = 0.25;
    double beta1 = 0.9;
    double beta2 = 0.96;
    double weight_decay = 0.03;
    double grad_clip_norm = 1.0;
    double label_dropout = 0.1;
    double lambda = 1.0;
    NoiseSchedule schedule;
    uint64_t seed = 0;
    int64_t ckpt_every = 0;  // epochs; 0 = final checkpoint only

    bool noise_active() const { return mode == TrainMode::NoiseOnly || mode == TrainMode::Rear; }
    bool reg_active() const { return mode == TrainMode::EmbedOnly || mode == TrainMode::Rear; }
    double effective_lambda() const { return reg_active() ? lambda : 0.0; }

    void validate() const;
};

// Linear warmup 0 -> peak over warmup_frac of the steps, then cosine decay
// peak -> final. Exact at both endpoints.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

// Decoupled-weight-decay Adam over the model's parameter registry.
class AdamW {
public:
    AdamW(ARModel<float>& model, const TrainConfig& cfg);

    void step(double lr);
    int64_t t() const { return t_; }

    // checkpoint plumbing
    void save_state(CheckpointContainer& c) const;
    void load_state(const CheckpointContainer& c);

private:
    ARModel<float>& model_;
    double beta1_, beta2_, weight_decay_;
    int64_t t_ = 0;
    std::vector<Tensor<float>> m_, v_;
};

// Scales gradients so the global norm is at most max_norm; returns the norm
// after clipping.
double clip_gradients(ARModel<float>& model, double max_norm);

struct StepStats {
    double ar_loss = 0.0;
    double reg_loss = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double eps_mean = 0.0;
    double lr = 0.0;
};

// One batch update: corrupt inputs per sequence, drop labels, evaluate the
// objective, clip, and step the optimizer. t is normalized epoch progress.
StepStats train_step(ARModel<float>& model, AdamW& opt, const std::vector<uint16_t>& seqs,
                     const std::vector<int64_t>& labels, const Codebook& codebook,
                     const TrainConfig& cfg, double t, int64_t global_step, double lr);

// Deterministic train/val split shared by ingestion and cache consumers.
void split_indices(int64_t count, uint64_t split_seed, double split_frac,
                   std::vector<int64_t>& train_idx, std::vector<int64_t>& val_idx);

struct EpochEval {
    double val_nll = 0.0;
    double val_ctr = 0.0;
};

struct TrainResult {
    int64_t epochs_run = 0;
    int64_t global_step = 0;
    std::vector<EpochEval> evals;
    std::string final_ckpt;
};

using MetricsSink = std::function<void(const std::string& jsonl_line)>;

// Full AR training over a token cache. Checkpoints are resumable: continuing
// from epoch e reproduces an uninterrupted run bit for bit.
TrainResult train_loop(ARModel<float>& model, const TokenCache& cache,
                       const std::vector<int64_t>& train_idx,
                       const std::vector<int64_t>& val_idx, const Codebook& codebook,
                       const TrainConfig& cfg, const std::string& out_dir,
                       const MetricsSink& sink, const std::string& resume_from = "");

// --- model/optimizer serialization

void save_ar_checkpoint(const ARModel<float>& model, const AdamW* opt,
                        const std::string& meta_json, const std::string& path);
std::string load_ar_checkpoint_meta(const std::string& path);
void load_ar_params(ARModel<float>& model, const CheckpointContainer& c);

// --- tokenizer training

struct TokenizerTrainResult {
    std::vector<double> epoch_loss;
    std::vector<double> val_psnr;
    double init_val_psnr = 0.0;
    double codebook_usage = 0.0;  // fraction of entries used on validation
};

TokenizerTrainResult train_tokenizer(VQTokenizer& tok, const Dataset& ds, int64_t epochs,
                                     int64_t batch, uint64_t seed, const MetricsSink& sink);

void save_tokenizer_checkpoint(VQTokenizer& tok, const std::string& path);
std::unique_ptr<VQTokenizer> load_tokenizer_checkpoint(const std::string& path);

}  // namespace rear
