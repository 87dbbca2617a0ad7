#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apm/losses.hpp"
#include "apm/numerics.hpp"
#include "apm/segment.hpp"

namespace apm {

/// Frame-level encoder: a stack of dilated temporal affine + ReLU layers.
/// Layer l sees frames {t - d_l, t, t + d_l}; indices beyond the segment
/// edges are clamped to the first/last frame.
struct EncoderConfig {
  std::size_t input_dim = 23;
  std::vector<std::size_t> layer_dims{64, 64, 64};
  std::vector<std::size_t> dilations{1, 2, 3};
  std::size_t embedding_dim = 32;

  void validate() const;
  std::size_t hidden_dim() const { return layer_dims.back(); }
  /// Frames spanned by one output frame; segments shorter than this are rejected.
  std::size_t receptive_field() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t num_phonemes = 40;
  std::size_t num_languages = 6;
  bool normalize_embedding = true;

  void validate() const;
};

struct AffineLayer {
  Mat weight;  // out x in
  Vec bias;
};

struct ModelParams {
  ModelConfig config;
  std::vector<AffineLayer> encoder;  // weight: out x (3 * in)
  AffineLayer phoneme_head;          // C_p x H
  AffineLayer embedding;             // E x 2H, penultimate layer of the language classifier
  AffineLayer language;              // C x E, row j is the class vector of language j;
                                     // bias used by plain softmax only

  /// Flat views over every tensor in a fixed order (see tensor_names()).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t parameter_count() const;

  static ModelParams zeros_like(const ModelParams& other);
};

/// Random initialisation. Class vectors are unit-normalized when `variant`
/// uses cosine logits.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed,
                        LossVariant variant = LossVariant::AMS);

/// Rescale every class vector of the language layer to unit norm.
void normalize_class_vectors(ModelParams& params);

struct MultiTaskWeights {
  double alpha = 1.0;
};

Mat encode_frames(const ModelParams& params, const Mat& frames);
PhonemePosteriors phoneme_posteriors(const ModelParams& params, const Mat& hidden);

/// Per-dimension mean followed by per-dimension standard deviation
/// (population variance, 1e-10 added under the root).
Vec stats_pool(const Mat& hidden);

struct LanguageOutput {
  Vec embedding;  // penultimate activation
  Vec scores;     // cosines for margin variants, affine logits for plain softmax
  double embedding_norm = 0.0;
};

LanguageOutput language_forward(const ModelParams& params, std::span<const double> pooled,
                                LossVariant variant);

struct MultiTaskLoss {
  LossResult total;  // loss = L_c + alpha * L_p; margin diagnostics from L_c
  double language_loss = 0.0;
  double phoneme_loss = 0.0;
};

struct ForwardOptions {
  // Pins p_i instead of reading it from the current posteriors. Used by the
  // gradient checker to hold the margin fixed while parameters are perturbed.
  std::optional<double> confidence_override;
};

MultiTaskLoss multi_task_loss(const ModelParams& params, const Segment& segment,
                              const MarginSpec& spec, const MultiTaskWeights& weights,
                              const ForwardOptions& options = {});

struct Gradients {
  ModelParams grads;
  MultiTaskLoss loss;
};

/// Exact reverse-mode gradient of the multi-task loss for one segment.
Gradients backward(const ModelParams& params, const Segment& segment, const MarginSpec& spec,
                   const MultiTaskWeights& weights, const ForwardOptions& options = {});

/// Distance from an evaluation point to the nearest non-differentiable spot of
/// each kind. Finite-difference checks skip points where any is small.
struct SmoothnessReport {
  double relu = INFINITY;          // smallest |pre-activation|
  double cosine_clamp = INFINITY;  // smallest 1 - |w_j . u| where cosines are clamped
  double angle = INFINITY;         // |theta_y + P - pi| (angular), or A-Softmax piece boundary
  double variance = INFINITY;      // smallest nonzero pooled variance
  double argmax_gap = INFINITY;    // smallest top-two phoneme logit gap, when p_i is differentiated
};
SmoothnessReport smoothness(const ModelParams& params, const Segment& segment,
                            const MarginSpec& spec, const ForwardOptions& options = {});

/// Language embedding (penultimate layer). Does not touch the phoneme head.
Vec extract_embedding(const ModelParams& params, const Mat& frames);
inline Vec extract_embedding(const ModelParams& params, const Segment& segment) {
  return extract_embedding(params, segment.frames);
}

// Checkpoint I/O: versioned JSON, float payload round-trips bit-exactly.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace apm
