#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "apm/numerics.hpp"

namespace apm {

/// Loss family. S is plain softmax over affine logits; the rest operate on
/// cosines between a unit embedding and unit class vectors.
enum class LossVariant { S, AS, AMS, AAMS, APMS, APAMS };

std::string_view to_string(LossVariant v) noexcept;
/// Accepts the canonical names (s, as, ams, aams, apms, apams) and the short
/// aliases used on the command line (softmax, am, aam, apm, apam).
std::optional<LossVariant> parse_loss_variant(std::string_view name);

/// True for every variant that uses normalized class weights without bias.
constexpr bool uses_cosine_logits(LossVariant v) noexcept { return v != LossVariant::S; }
constexpr bool is_phoneme_aware(LossVariant v) noexcept {
  return v == LossVariant::APMS || v == LossVariant::APAMS;
}

struct MarginSpec {
  LossVariant variant = LossVariant::S;
  double m = 0.0;     // base additive (angular) margin
  double beta = 0.0;  // phoneme-aware control factor
  double s = 30.0;    // logit scale
  int as_margin = 1;  // integer angular multiplier, A-Softmax only
  // When set, the gradient of the margin P_i = m + beta * p_i is propagated
  // into the phoneme branch. Off by default: P_i is a per-sample constant.
  bool phoneme_grad_flow = false;

  void validate() const;

  static MarginSpec softmax() { return {}; }
  static MarginSpec a_softmax(int as_margin) {
    return {LossVariant::AS, 0.0, 0.0, 30.0, as_margin};
  }
  static MarginSpec am(double m, double s = 30.0) { return {LossVariant::AMS, m, 0.0, s}; }
  static MarginSpec aam(double m, double s = 30.0) { return {LossVariant::AAMS, m, 0.0, s}; }
  static MarginSpec apm(double m, double beta, double s = 30.0) {
    return {LossVariant::APMS, m, beta, s};
  }
  static MarginSpec apam(double m, double beta, double s = 30.0) {
    return {LossVariant::APAMS, m, beta, s};
  }
};

struct LossResult {
  double loss = 0.0;
  Vec grad_cos;  // d loss / d cos(theta_j); for plain softmax, d loss / d logit_j
  double margin_used = 0.0;
  double phoneme_confidence = -1.0;  // p_i, or -1 when the variant has no phoneme term
  double grad_margin = 0.0;          // d loss / d P_i (phoneme-aware variants)
  double grad_norm = 0.0;            // d loss / d ||x|| (A-Softmax only)
};

/// Row-stochastic T x C_p matrix of frame-level phoneme posteriors.
class PhonemePosteriors {
 public:
  PhonemePosteriors() = default;
  /// Validates rows: entries in [0, 1], each row sums to 1 within `tol`.
  explicit PhonemePosteriors(Mat probs, double tol = 1e-6);

  std::size_t frames() const noexcept { return probs_.rows(); }
  std::size_t classes() const noexcept { return probs_.cols(); }
  const Mat& probs() const noexcept { return probs_; }

 private:
  Mat probs_;
};

struct PhonemeMargin {
  double margin = 0.0;      // P_i = m + beta * p_i
  double confidence = 0.0;  // p_i = mean over frames of the row maximum
};

LossResult softmax_ce(std::span<const double> logits, std::size_t label);

/// Piecewise A-Softmax target function (-1)^k cos(m theta) - 2k on [0, pi].
double a_softmax_phi(double theta, int m_int);

/// `x_norm` is ||x_i||; the target angle is recovered from cosines[label].
LossResult a_softmax_loss(double x_norm, std::span<const double> cosines, const MarginSpec& spec,
                          std::size_t label);

LossResult am_softmax_loss(std::span<const double> cosines, const MarginSpec& spec,
                           std::size_t label);
LossResult aam_softmax_loss(std::span<const double> cosines, const MarginSpec& spec,
                            std::size_t label);

/// p_i from the highest posterior of every frame, never from the reference
/// phoneme label. Throws EmptyPosterior when T == 0.
PhonemeMargin phoneme_aware_margin(const PhonemePosteriors& post, const MarginSpec& spec);

LossResult apm_softmax_loss(std::span<const double> cosines, const PhonemePosteriors& post,
                            const MarginSpec& spec, std::size_t label);
LossResult apam_softmax_loss(std::span<const double> cosines, const PhonemePosteriors& post,
                             const MarginSpec& spec, std::size_t label);

// Margin-explicit forms shared by the fixed and phoneme-aware variants.
LossResult additive_margin_loss(std::span<const double> cosines, double margin, double s,
                                std::size_t label);
LossResult additive_angular_margin_loss(std::span<const double> cosines, double margin, double s,
                                        std::size_t label);

/// Dispatch on spec.variant for the cosine-based variants. `post` must be
/// provided for APMS/APAMS and `x_norm` is only read for AS.
LossResult margin_loss(std::span<const double> cosines, const MarginSpec& spec, std::size_t label,
                       const PhonemeMargin* margin = nullptr, double x_norm = 1.0);

}  // namespace apm
