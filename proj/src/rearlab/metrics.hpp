#pragma once

#include <cstdint>
#include <vector>

#include "rearlab/ar_model.hpp"
#include "rearlab/image_types.hpp"
#include "rearlab/tensor.hpp"

namespace rear {

inline constexpr double kPsnrCapDb = 99.0;

// Fraction of positions where the prediction equals ground truth.
double ctr(const std::vector<uint16_t>& pred, const std::vector<uint16_t>& gt);

// Teacher-forced argmax predictions for a batch of clean sequences.
// seqs is [B,N]; returns [B,N] predictions.
std::vector<uint16_t> teacher_forced_predictions(const ARModel<float>& model,
                                                 const std::vector<uint16_t>& seqs,
                                                 const std::vector<int64_t>& labels);

// Teacher-forced CTR where the *context* is corrupted but predictions are
// judged against the clean sequence.
std::vector<uint16_t> teacher_forced_predictions_noisy(const ARModel<float>& model,
                                                       const std::vector<uint16_t>& noisy_inputs,
                                                       const std::vector<int64_t>& labels);

// exp(mean teacher-forced NLL) of seq under the model.
double perplexity(const ARModel<float>& model, const std::vector<uint16_t>& seq, int64_t label);

// Batch helper: per-sequence NLL (mean over positions).
std::vector<double> sequence_nll(const ARModel<float>& model, const std::vector<uint16_t>& seqs,
                                 const std::vector<int64_t>& labels);

// Peak signal-to-noise ratio in dB over the whole batch, L = 1. MSE of zero
// maps to the +99 dB sentinel.
double psnr(const ImageBatch& a, const ImageBatch& b);

// Feature extractor interface for the perceptual distance. Layers are [B,h,w,c]
// latent-grid-shaped activation maps.
class PerceptualExtractor {
public:
    virtual ~PerceptualExtractor() = default;
    virtual std::vector<LatentGrid> features(const ImageBatch& images) const = 0;
};

// Sum over layers of the spatial mean of squared channel-normalized feature
// differences (unit layer weights). Zero for identical inputs; symmetric.
double perceptual_distance(const ImageBatch& a, const ImageBatch& b,
                           const PerceptualExtractor& extractor);

// Per-image variants (batch size 1 slices).
std::vector<double> perceptual_distance_per_image(const ImageBatch& a, const ImageBatch& b,
                                                  const PerceptualExtractor& extractor);
std::vector<double> psnr_per_image(const ImageBatch& a, const ImageBatch& b);

struct CkaResult {
    double value = 0.0;
    bool degenerate = false;
};

// Linear centered kernel alignment between X [n,dx] and Y [n,dy]. Constant
// features are flagged degenerate and score 0.
CkaResult cka(const Tensor<float>& X, const Tensor<float>& Y);
CkaResult cka(const Tensor<double>& X, const Tensor<double>& Y);

}  // namespace rear
