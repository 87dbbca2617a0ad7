#include "apm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace apm {

namespace {

constexpr double kPi = std::numbers::pi;

void check_label(std::size_t label, std::size_t classes) {
  if (label >= classes) {
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " with " +
                                                std::to_string(classes) + " classes");
  }
}

void require_variant(const MarginSpec& spec, LossVariant expected) {
  spec.validate();
  if (spec.variant != expected) {
    throw Error(ErrorCode::InvalidSpec, std::string("expected variant ") +
                                            std::string(to_string(expected)) + ", got " +
                                            std::string(to_string(spec.variant)));
  }
}

// -log softmax(z)[label] with z[label] already carrying the margin.
// Fills grad with d loss / d z.
double target_ce(std::span<const double> z, std::size_t label, Vec& grad) {
  grad = stable_softmax(z);
  double rest = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (j != label) rest += grad[j];
  }
  grad[label] = -rest;
  // When the target logit dominates, LSE(z) - z_y cancels catastrophically.
  if (std::all_of(z.begin(), z.end(), [&](double v) { return v <= z[label]; })) {
    double tail = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (j != label) tail += std::exp(z[j] - z[label]);
    }
    return std::log1p(tail);
  }
  return std::max(log_sum_exp(z) - z[label], 0.0);
}

// Chebyshev polynomial of the second kind U_n(c).
double chebyshev_u(int n, double c) {
  if (n == 0) return 1.0;
  double prev = 1.0, cur = 2.0 * c;
  for (int i = 1; i < n; ++i) {
    const double next = 2.0 * c * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

int a_softmax_piece(double theta, int m_int) {
  const int k = static_cast<int>(std::floor(m_int * theta / kPi));
  return std::clamp(k, 0, m_int - 1);
}

}  // namespace

std::string_view to_string(LossVariant v) noexcept {
  switch (v) {
    case LossVariant::S: return "S";
    case LossVariant::AS: return "AS";
    case LossVariant::AMS: return "AMS";
    case LossVariant::AAMS: return "AAMS";
    case LossVariant::APMS: return "APMS";
    case LossVariant::APAMS: return "APAMS";
  }
  return "?";
}

std::optional<LossVariant> parse_loss_variant(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "s" || n == "softmax") return LossVariant::S;
  if (n == "as" || n == "a-softmax" || n == "asoftmax") return LossVariant::AS;
  if (n == "am" || n == "ams") return LossVariant::AMS;
  if (n == "aam" || n == "aams") return LossVariant::AAMS;
  if (n == "apm" || n == "apms") return LossVariant::APMS;
  if (n == "apam" || n == "apams") return LossVariant::APAMS;
  return std::nullopt;
}

void MarginSpec::validate() const {
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidSpec, "scale s must be > 0");
  if (!(m >= 0.0) || !std::isfinite(m)) throw Error(ErrorCode::InvalidSpec, "margin m must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw Error(ErrorCode::InvalidSpec, "beta must be >= 0");
  }
  if (as_margin < 1) throw Error(ErrorCode::InvalidSpec, "as_margin must be >= 1");
}

PhonemePosteriors::PhonemePosteriors(Mat probs, double tol) : probs_(std::move(probs)) {
  for (std::size_t t = 0; t < probs_.rows(); ++t) {
    double sum = 0.0;
    for (double p : probs_.row(t)) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(ErrorCode::InvalidPosterior,
                    "posterior entry outside [0,1] at frame " + std::to_string(t));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw Error(ErrorCode::InvalidPosterior,
                  "posterior row " + std::to_string(t) + " sums to " + std::to_string(sum));
    }
  }
}

LossResult softmax_ce(std::span<const double> logits, std::size_t label) {
  check_label(label, logits.size());
  LossResult r;
  r.loss = target_ce(logits, label, r.grad_cos);
  return r;
}

double a_softmax_phi(double theta, int m_int) {
  if (m_int < 1) throw Error(ErrorCode::InvalidSpec, "as_margin must be >= 1");
  if (!(theta >= 0.0 && theta <= kPi)) {
    throw Error(ErrorCode::ThetaOutOfRange, "theta " + std::to_string(theta) + " not in [0, pi]");
  }
  const int k = a_softmax_piece(theta, m_int);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  return sign * std::cos(m_int * theta) - 2.0 * k;
}

LossResult a_softmax_loss(double x_norm, std::span<const double> cosines, const MarginSpec& spec,
                          std::size_t label) {
  require_variant(spec, LossVariant::AS);
  check_label(label, cosines.size());
  const double c = std::clamp(cosines[label], -1.0, 1.0);
  const double theta = std::acos(c);
  const int m_int = spec.as_margin;
  const int k = a_softmax_piece(theta, m_int);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  const double phi = m_int == 1 ? cosines[label] : a_softmax_phi(theta, m_int);
  // d phi / d cos = (-1)^k m U_{m-1}(cos), finite at theta = 0 and pi.
  const double dphi = m_int == 1 ? 1.0 : sign * m_int * chebyshev_u(m_int - 1, c);

  Vec z(cosines.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = x_norm * cosines[j];
  z[label] = x_norm * phi;

  LossResult r;
  Vec gz;
  r.loss = target_ce(z, label, gz);
  r.grad_cos.resize(z.size());
  double gnorm = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    r.grad_cos[j] = x_norm * gz[j];
    gnorm += gz[j] * (j == label ? phi : cosines[j]);
  }
  r.grad_cos[label] *= dphi;
  r.grad_norm = gnorm;
  r.margin_used = static_cast<double>(m_int);
  return r;
}

LossResult additive_margin_loss(std::span<const double> cosines, double margin, double s,
                                std::size_t label) {
  check_label(label, cosines.size());
  Vec z(cosines.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = s * cosines[j];
  z[label] = s * (cosines[label] - margin);

  LossResult r;
  Vec gz;
  r.loss = target_ce(z, label, gz);
  r.grad_cos.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) r.grad_cos[j] = s * gz[j];
  r.grad_margin = -s * gz[label];
  r.margin_used = margin;
  return r;
}

LossResult additive_angular_margin_loss(std::span<const double> cosines, double margin, double s,
                                        std::size_t label) {
  check_label(label, cosines.size());
  const double raw = cosines[label];
  const double c = std::clamp(raw, -1.0, 1.0);
  const double theta = std::acos(c);

  double phi, dphi_dc, dphi_dmargin;
  if (theta + margin < kPi) {
    // cos(theta + m) expanded so that m = 0 returns the cosine bit-for-bit.
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double cm = std::cos(margin), sm = std::sin(margin);
    phi = c * cm - sin_theta * sm;
    dphi_dc = (raw == c) ? cm + sm * c / std::max(sin_theta, 1e-12) : 0.0;
    dphi_dmargin = -(sin_theta * cm + c * sm);
  } else {
    // Effective angle saturates at pi: no wraparound.
    phi = -1.0;
    dphi_dc = 0.0;
    dphi_dmargin = 0.0;
  }

  Vec z(cosines.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = s * cosines[j];
  z[label] = s * phi;

  LossResult r;
  Vec gz;
  r.loss = target_ce(z, label, gz);
  r.grad_cos.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) r.grad_cos[j] = s * gz[j];
  r.grad_cos[label] *= dphi_dc;
  r.grad_margin = s * gz[label] * dphi_dmargin;
  r.margin_used = margin;
  return r;
}

LossResult am_softmax_loss(std::span<const double> cosines, const MarginSpec& spec,
                           std::size_t label) {
  require_variant(spec, LossVariant::AMS);
  auto r = additive_margin_loss(cosines, spec.m, spec.s, label);
  r.grad_margin = 0.0;
  return r;
}

LossResult aam_softmax_loss(std::span<const double> cosines, const MarginSpec& spec,
                            std::size_t label) {
  require_variant(spec, LossVariant::AAMS);
  auto r = additive_angular_margin_loss(cosines, spec.m, spec.s, label);
  r.grad_margin = 0.0;
  return r;
}

PhonemeMargin phoneme_aware_margin(const PhonemePosteriors& post, const MarginSpec& spec) {
  if (post.frames() == 0 || post.classes() == 0) {
    throw Error(ErrorCode::EmptyPosterior, "phoneme posteriors have no frames");
  }
  Vec maxima(post.frames());
  for (std::size_t t = 0; t < post.frames(); ++t) {
    const auto row = post.probs().row(t);
    maxima[t] = *std::max_element(row.begin(), row.end());
  }
  // Summing in sorted order makes p_i exactly invariant to frame order.
  std::sort(maxima.begin(), maxima.end());
  double sum = 0.0;
  for (double v : maxima) sum += v;
  PhonemeMargin out;
  out.confidence = sum / static_cast<double>(post.frames());
  out.margin = spec.m + spec.beta * out.confidence;
  return out;
}

LossResult apm_softmax_loss(std::span<const double> cosines, const PhonemePosteriors& post,
                            const MarginSpec& spec, std::size_t label) {
  require_variant(spec, LossVariant::APMS);
  const PhonemeMargin pm = phoneme_aware_margin(post, spec);
  auto r = additive_margin_loss(cosines, pm.margin, spec.s, label);
  r.phoneme_confidence = pm.confidence;
  return r;
}

LossResult apam_softmax_loss(std::span<const double> cosines, const PhonemePosteriors& post,
                             const MarginSpec& spec, std::size_t label) {
  require_variant(spec, LossVariant::APAMS);
  const PhonemeMargin pm = phoneme_aware_margin(post, spec);
  auto r = additive_angular_margin_loss(cosines, pm.margin, spec.s, label);
  r.phoneme_confidence = pm.confidence;
  return r;
}

LossResult margin_loss(std::span<const double> cosines, const MarginSpec& spec, std::size_t label,
                       const PhonemeMargin* margin, double x_norm) {
  switch (spec.variant) {
    case LossVariant::S: return softmax_ce(cosines, label);
    case LossVariant::AS: return a_softmax_loss(x_norm, cosines, spec, label);
    case LossVariant::AMS: return am_softmax_loss(cosines, spec, label);
    case LossVariant::AAMS: return aam_softmax_loss(cosines, spec, label);
    case LossVariant::APMS:
    case LossVariant::APAMS: {
      spec.validate();
      if (margin == nullptr) {
        throw Error(ErrorCode::EmptyPosterior, "phoneme-aware variant needs a phoneme margin");
      }
      auto r = spec.variant == LossVariant::APMS
                   ? additive_margin_loss(cosines, margin->margin, spec.s, label)
                   : additive_angular_margin_loss(cosines, margin->margin, spec.s, label);
      r.phoneme_confidence = margin->confidence;
      return r;
    }
  }
  throw Error(ErrorCode::InvalidSpec, "unknown loss variant");
}

}  // namespace apm
