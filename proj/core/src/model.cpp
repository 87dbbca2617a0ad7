#include "apm/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>

namespace apm {

namespace {

constexpr double kPoolFloor = 1e-10;

struct LayerCache {
  Mat context;  // T x 3in
  Mat preact;   // T x out
  Mat act;      // T x out
};

struct ForwardState {
  std::vector<LayerCache> layers;
  Mat phoneme_logits;
  Mat phoneme_probs;
  Vec mean;
  Vec stddev;
  Vec pooled;
  Vec embedding;
  double embedding_norm = 0.0;
  Vec unit;      // embedding / ||embedding|| (cosine variants)
  Vec raw_dots;  // w_j . unit before clamping
  Vec scores;
};

const Mat& hidden_of(const ForwardState& st) { return st.layers.back().act; }

void check_frames(const ModelParams& params, const Mat& frames) {
  const auto& enc = params.config.encoder;
  if (frames.cols() != enc.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "frames have dim " + std::to_string(frames.cols()) +
                                                  ", encoder expects " +
                                                  std::to_string(enc.input_dim));
  }
  if (frames.rows() < enc.receptive_field()) {
    throw Error(ErrorCode::SegmentTooShort, "segment of " + std::to_string(frames.rows()) +
                                                " frames, receptive field is " +
                                                std::to_string(enc.receptive_field()));
  }
}

std::size_t clamp_index(std::ptrdiff_t t, std::size_t len) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t, 0, static_cast<std::ptrdiff_t>(len) - 1));
}

void run_encoder(const ModelParams& params, const Mat& frames, ForwardState& st) {
  const auto& enc = params.config.encoder;
  const std::size_t len = frames.rows();
  st.layers.resize(params.encoder.size());
  const Mat* input = &frames;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    const std::size_t in = input->cols();
    const auto d = static_cast<std::ptrdiff_t>(enc.dilations[l]);
    auto& cache = st.layers[l];
    cache.context = Mat(len, 3 * in);
    for (std::size_t t = 0; t < len; ++t) {
      const auto ti = static_cast<std::ptrdiff_t>(t);
      const std::size_t src[3] = {clamp_index(ti - d, len), t, clamp_index(ti + d, len)};
      auto dst = cache.context.row(t);
      for (int k = 0; k < 3; ++k) {
        const auto s = input->row(src[k]);
        std::copy(s.begin(), s.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * in));
      }
    }
    const std::size_t out = layer.weight.rows();
    cache.preact = Mat(len, out);
    for (std::size_t t = 0; t < len; ++t) {
      auto r = cache.preact.row(t);
      std::copy(layer.bias.begin(), layer.bias.end(), r.begin());
    }
    matmul_nt_add(cache.context, layer.weight, cache.preact);
    cache.act = cache.preact;
    for (double& v : cache.act.data()) v = std::max(v, 0.0);
    input = &cache.act;
  }
}

void run_phoneme_head(const ModelParams& params, ForwardState& st) {
  const Mat& hidden = hidden_of(st);
  const auto& head = params.phoneme_head;
  st.phoneme_logits = Mat(hidden.rows(), head.weight.rows());
  for (std::size_t t = 0; t < hidden.rows(); ++t) {
    auto r = st.phoneme_logits.row(t);
    std::copy(head.bias.begin(), head.bias.end(), r.begin());
  }
  matmul_nt_add(hidden, head.weight, st.phoneme_logits);
  st.phoneme_probs = Mat(hidden.rows(), head.weight.rows());
  for (std::size_t t = 0; t < hidden.rows(); ++t) {
    const Vec p = stable_softmax(st.phoneme_logits.row(t));
    std::copy(p.begin(), p.end(), st.phoneme_probs.row(t).begin());
  }
}

void pool_into(const Mat& hidden, Vec& mean, Vec& stddev, Vec& pooled) {
  const std::size_t len = hidden.rows(), dim = hidden.cols();
  if (len < 2) {
    throw Error(ErrorCode::SegmentTooShort, "statistics pooling needs at least 2 frames");
  }
  mean.assign(dim, 0.0);
  stddev.assign(dim, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const auto r = hidden.row(t);
    for (std::size_t k = 0; k < dim; ++k) mean[k] += r[k];
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : mean) v *= inv;
  for (std::size_t t = 0; t < len; ++t) {
    const auto r = hidden.row(t);
    for (std::size_t k = 0; k < dim; ++k) {
      const double c = r[k] - mean[k];
      stddev[k] += c * c;
    }
  }
  for (double& v : stddev) v = std::sqrt(v * inv + kPoolFloor);
  pooled.resize(2 * dim);
  std::copy(mean.begin(), mean.end(), pooled.begin());
  std::copy(stddev.begin(), stddev.end(), pooled.begin() + static_cast<std::ptrdiff_t>(dim));
}

void run_language_head(const ModelParams& params, LossVariant variant, ForwardState& st) {
  const auto& emb = params.embedding;
  st.embedding = emb.bias;
  gemv_add(emb.weight, st.pooled, st.embedding);
  st.embedding_norm = l2_norm(st.embedding);

  const auto& lang = params.language;
  if (!uses_cosine_logits(variant)) {
    st.scores = lang.bias;
    gemv_add(lang.weight, st.embedding, st.scores);
    return;
  }
  if (params.config.normalize_embedding || variant == LossVariant::AS) {
    st.unit = l2_normalize(st.embedding);
  } else {
    st.unit = st.embedding;
  }
  st.raw_dots.assign(lang.weight.rows(), 0.0);
  gemv_add(lang.weight, st.unit, st.raw_dots);
  st.scores = st.raw_dots;
  if (params.config.normalize_embedding || variant == LossVariant::AS) {
    for (double& v : st.scores) v = std::clamp(v, -1.0, 1.0);
  }
}

void run_forward(const ModelParams& params, const Mat& frames, LossVariant variant,
                 bool with_phonemes, ForwardState& st) {
  check_frames(params, frames);
  run_encoder(params, frames, st);
  if (with_phonemes) run_phoneme_head(params, st);
  pool_into(hidden_of(st), st.mean, st.stddev, st.pooled);
  run_language_head(params, variant, st);
}

void check_segment_labels(const ModelParams& params, const Segment& segment) {
  if (segment.phonemes.size() != segment.frames.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "segment " + segment.id + " has " + std::to_string(segment.phonemes.size()) +
                    " phoneme labels for " + std::to_string(segment.frames.rows()) + " frames");
  }
  if (segment.language >= params.config.num_languages) {
    throw Error(ErrorCode::LabelOutOfRange,
                "segment " + segment.id + " language " + std::to_string(segment.language));
  }
  for (std::size_t p : segment.phonemes) {
    if (p >= params.config.num_phonemes) {
      throw Error(ErrorCode::LabelOutOfRange, "segment " + segment.id + " phoneme " +
                                                  std::to_string(p));
    }
  }
}

MultiTaskLoss evaluate_loss(const ModelParams& params, const Segment& segment,
                            const MarginSpec& spec, const MultiTaskWeights& weights,
                            const ForwardOptions& options, ForwardState& st) {
  spec.validate();
  if (!(weights.alpha >= 0.0) || !std::isfinite(weights.alpha)) {
    throw Error(ErrorCode::ConfigInvalid, "alpha must be finite and >= 0");
  }
  check_segment_labels(params, segment);
  run_forward(params, segment.frames, spec.variant, true, st);

  const std::size_t len = segment.length();
  double phoneme_loss = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    phoneme_loss += log_sum_exp(st.phoneme_logits.row(t)) -
                    st.phoneme_logits(t, segment.phonemes[t]);
  }
  phoneme_loss /= static_cast<double>(len);

  LossResult lang;
  if (is_phoneme_aware(spec.variant)) {
    PhonemeMargin pm;
    if (options.confidence_override) {
      pm.confidence = *options.confidence_override;
      pm.margin = spec.m + spec.beta * pm.confidence;
    } else {
      pm = phoneme_aware_margin(PhonemePosteriors(st.phoneme_probs), spec);
    }
    lang = margin_loss(st.scores, spec, segment.language, &pm);
  } else {
    lang = margin_loss(st.scores, spec, segment.language, nullptr, st.embedding_norm);
  }

  MultiTaskLoss out;
  out.language_loss = lang.loss;
  out.phoneme_loss = phoneme_loss;
  out.total = std::move(lang);
  out.total.loss = out.language_loss + weights.alpha * phoneme_loss;
  return out;
}

}  // namespace

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "dev") return Split::Dev;
  if (name == "test") return Split::Test;
  throw Error(ErrorCode::SchemaMismatch, "unknown split '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  if (input_dim < 1 || embedding_dim < 1) {
    throw Error(ErrorCode::ConfigInvalid, "encoder dimensions must be >= 1");
  }
  if (layer_dims.size() < 2) throw Error(ErrorCode::ConfigInvalid, "encoder needs >= 2 layers");
  if (dilations.size() != layer_dims.size()) {
    throw Error(ErrorCode::ConfigInvalid, "one dilation per encoder layer is required");
  }
  for (std::size_t d : layer_dims) {
    if (d < 1) throw Error(ErrorCode::ConfigInvalid, "layer dims must be >= 1");
  }
  for (std::size_t d : dilations) {
    if (d < 1) throw Error(ErrorCode::ConfigInvalid, "dilations must be positive");
  }
}

std::size_t EncoderConfig::receptive_field() const {
  return 1 + 2 * std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
}

void ModelConfig::validate() const {
  encoder.validate();
  if (num_phonemes < 2) throw Error(ErrorCode::ConfigInvalid, "need >= 2 phoneme classes");
  if (num_languages < 2) throw Error(ErrorCode::ConfigInvalid, "need >= 2 languages");
}

std::vector<std::span<double>> ModelParams::tensors() {
  std::vector<std::span<double>> out;
  for (auto& l : encoder) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
  }
  for (AffineLayer* l : {&phoneme_head, &embedding, &language}) {
    out.emplace_back(l->weight.data());
    out.emplace_back(l->bias);
  }
  return out;
}

std::vector<std::span<const double>> ModelParams::tensors() const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(s);
  return out;
}

std::vector<std::string> ModelParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    out.push_back("encoder." + std::to_string(l) + ".weight");
    out.push_back("encoder." + std::to_string(l) + ".bias");
  }
  for (const char* n : {"phoneme_head", "embedding", "language"}) {
    out.push_back(std::string(n) + ".weight");
    out.push_back(std::string(n) + ".bias");
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (auto s : tensors()) n += s.size();
  return n;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams z = other;
  for (auto s : z.tensors()) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, LossVariant variant) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto affine = [&rng](std::size_t out, std::size_t in, double stddev, double bias) {
    AffineLayer l{Mat(out, in), Vec(out, bias)};
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& w : l.weight.data()) w = dist(rng);
    return l;
  };

  ModelParams p;
  p.config = config;
  const auto& enc = config.encoder;
  std::size_t in = enc.input_dim;
  for (std::size_t out : enc.layer_dims) {
    const std::size_t fan_in = 3 * in;
    p.encoder.push_back(affine(out, fan_in, std::sqrt(2.0 / static_cast<double>(fan_in)), 0.01));
    in = out;
  }
  const std::size_t hidden = enc.hidden_dim();
  p.phoneme_head = affine(config.num_phonemes, hidden, 1.0 / std::sqrt(double(hidden)), 0.0);
  p.embedding = affine(enc.embedding_dim, 2 * hidden, 1.0 / std::sqrt(double(2 * hidden)), 0.0);
  p.language = affine(config.num_languages, enc.embedding_dim,
                      1.0 / std::sqrt(double(enc.embedding_dim)), 0.0);
  if (uses_cosine_logits(variant)) normalize_class_vectors(p);
  return p;
}

void normalize_class_vectors(ModelParams& params) {
  auto& w = params.language.weight;
  for (std::size_t j = 0; j < w.rows(); ++j) {
    const Vec u = l2_normalize(w.row(j));
    std::copy(u.begin(), u.end(), w.row(j).begin());
  }
}

Mat encode_frames(const ModelParams& params, const Mat& frames) {
  check_frames(params, frames);
  ForwardState st;
  run_encoder(params, frames, st);
  return std::move(st.layers.back().act);
}

PhonemePosteriors phoneme_posteriors(const ModelParams& params, const Mat& hidden) {
  ForwardState st;
  st.layers.resize(1);
  st.layers[0].act = hidden;
  run_phoneme_head(params, st);
  return PhonemePosteriors(std::move(st.phoneme_probs));
}

Vec stats_pool(const Mat& hidden) {
  Vec mean, stddev, pooled;
  pool_into(hidden, mean, stddev, pooled);
  return pooled;
}

LanguageOutput language_forward(const ModelParams& params, std::span<const double> pooled,
                                LossVariant variant) {
  ForwardState st;
  st.pooled.assign(pooled.begin(), pooled.end());
  run_language_head(params, variant, st);
  return {std::move(st.embedding), std::move(st.scores), st.embedding_norm};
}

MultiTaskLoss multi_task_loss(const ModelParams& params, const Segment& segment,
                              const MarginSpec& spec, const MultiTaskWeights& weights,
                              const ForwardOptions& options) {
  ForwardState st;
  return evaluate_loss(params, segment, spec, weights, options, st);
}

Gradients backward(const ModelParams& params, const Segment& segment, const MarginSpec& spec,
                   const MultiTaskWeights& weights, const ForwardOptions& options) {
  ForwardState st;
  Gradients out{ModelParams::zeros_like(params), evaluate_loss(params, segment, spec, weights,
                                                               options, st)};
  ModelParams& g = out.grads;
  const LossResult& lang = out.loss.total;
  const std::size_t len = segment.length();
  const Mat& hidden = hidden_of(st);
  const std::size_t hdim = hidden.cols();

  // Language head.
  Vec d_embedding(st.embedding.size(), 0.0);
  if (!uses_cosine_logits(spec.variant)) {
    outer_add(g.language.weight, lang.grad_cos, st.embedding);
    for (std::size_t j = 0; j < lang.grad_cos.size(); ++j) g.language.bias[j] += lang.grad_cos[j];
    gemv_t_add(params.language.weight, lang.grad_cos, d_embedding);
  } else {
    const bool clamped = params.config.normalize_embedding || spec.variant == LossVariant::AS;
    Vec g_dots = lang.grad_cos;
    if (clamped) {
      for (std::size_t j = 0; j < g_dots.size(); ++j) {
        if (std::abs(st.raw_dots[j]) > 1.0) g_dots[j] = 0.0;
      }
    }
    outer_add(g.language.weight, g_dots, st.unit);
    Vec d_unit(st.unit.size(), 0.0);
    gemv_t_add(params.language.weight, g_dots, d_unit);
    if (clamped) {
      const double n = st.embedding_norm;
      const double proj = dot(st.unit, d_unit);
      for (std::size_t k = 0; k < d_embedding.size(); ++k) {
        d_embedding[k] = (d_unit[k] - st.unit[k] * proj) / n + lang.grad_norm * st.unit[k];
      }
    } else {
      d_embedding = d_unit;
    }
  }

  // Embedding layer.
  outer_add(g.embedding.weight, d_embedding, st.pooled);
  for (std::size_t k = 0; k < d_embedding.size(); ++k) g.embedding.bias[k] += d_embedding[k];
  Vec d_pooled(st.pooled.size(), 0.0);
  gemv_t_add(params.embedding.weight, d_embedding, d_pooled);

  // Statistics pooling.
  Mat d_hidden(len, hdim);
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t t = 0; t < len; ++t) {
    const auto h = hidden.row(t);
    auto dh = d_hidden.row(t);
    for (std::size_t k = 0; k < hdim; ++k) {
      dh[k] = d_pooled[k] * inv +
              d_pooled[hdim + k] * (h[k] - st.mean[k]) * inv / st.stddev[k];
    }
  }

  // Phoneme head: alpha * mean frame CE, plus the margin path when enabled.
  const std::size_t cp = params.config.num_phonemes;
  Mat d_logits(len, cp);
  const double frame_scale = weights.alpha * inv;
  for (std::size_t t = 0; t < len; ++t) {
    const auto p = st.phoneme_probs.row(t);
    auto dl = d_logits.row(t);
    for (std::size_t k = 0; k < cp; ++k) dl[k] = frame_scale * p[k];
    dl[segment.phonemes[t]] -= frame_scale;
  }
  if (is_phoneme_aware(spec.variant) && spec.phoneme_grad_flow && !options.confidence_override) {
    const double scale = lang.grad_margin * spec.beta * inv;
    for (std::size_t t = 0; t < len; ++t) {
      const auto p = st.phoneme_probs.row(t);
      const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      auto dl = d_logits.row(t);
      for (std::size_t k = 0; k < cp; ++k) {
        dl[k] += scale * p[top] * ((k == top ? 1.0 : 0.0) - p[k]);
      }
    }
  }
  matmul_tn_add(d_logits, hidden, g.phoneme_head.weight);
  for (std::size_t t = 0; t < len; ++t) {
    const auto dl = d_logits.row(t);
    for (std::size_t k = 0; k < cp; ++k) g.phoneme_head.bias[k] += dl[k];
  }
  matmul_nn_add(d_logits, params.phoneme_head.weight, d_hidden);

  // Encoder, last layer first.
  const auto& enc = params.config.encoder;
  Mat d_act = std::move(d_hidden);
  for (std::size_t li = params.encoder.size(); li-- > 0;) {
    const auto& cache = st.layers[li];
    auto& gl = g.encoder[li];
    Mat d_pre = std::move(d_act);
    for (std::size_t i = 0; i < d_pre.data().size(); ++i) {
      if (cache.preact.data()[i] <= 0.0) d_pre.data()[i] = 0.0;
    }
    matmul_tn_add(d_pre, cache.context, gl.weight);
    for (std::size_t t = 0; t < len; ++t) {
      const auto r = d_pre.row(t);
      for (std::size_t k = 0; k < r.size(); ++k) gl.bias[k] += r[k];
    }
    if (li == 0) break;
    Mat d_context(len, cache.context.cols());
    matmul_nn_add(d_pre, params.encoder[li].weight, d_context);
    const std::size_t in = cache.context.cols() / 3;
    const auto d = static_cast<std::ptrdiff_t>(enc.dilations[li]);
    d_act = Mat(len, in);
    for (std::size_t t = 0; t < len; ++t) {
      const auto ti = static_cast<std::ptrdiff_t>(t);
      const std::size_t src[3] = {clamp_index(ti - d, len), t, clamp_index(ti + d, len)};
      const auto dc = d_context.row(t);
      for (int k = 0; k < 3; ++k) {
        auto dst = d_act.row(src[k]);
        for (std::size_t c = 0; c < in; ++c) dst[c] += dc[static_cast<std::size_t>(k) * in + c];
      }
    }
  }
  return out;
}

SmoothnessReport smoothness(const ModelParams& params, const Segment& segment,
                            const MarginSpec& spec, const ForwardOptions& options) {
  ForwardState st;
  const MultiTaskLoss loss = evaluate_loss(params, segment, spec, {1.0}, options, st);
  SmoothnessReport r;
  for (const auto& layer : st.layers) {
    for (double v : layer.preact.data()) r.relu = std::min(r.relu, std::abs(v));
  }
  for (double sd : st.stddev) {
    const double var = sd * sd - kPoolFloor;
    if (var > 1e-14) r.variance = std::min(r.variance, var);
  }
  const bool clamped = uses_cosine_logits(spec.variant) &&
                       (params.config.normalize_embedding || spec.variant == LossVariant::AS);
  if (clamped) {
    for (double v : st.raw_dots) r.cosine_clamp = std::min(r.cosine_clamp, 1.0 - std::abs(v));
  }
  const double theta = uses_cosine_logits(spec.variant)
                           ? std::acos(std::clamp(st.scores[segment.language], -1.0, 1.0))
                           : 0.0;
  if (spec.variant == LossVariant::AAMS || spec.variant == LossVariant::APAMS) {
    r.angle = std::abs(theta + loss.total.margin_used - std::numbers::pi);
  } else if (spec.variant == LossVariant::AS) {
    for (int j = 1; j < spec.as_margin; ++j) {
      r.angle = std::min(r.angle, std::abs(theta - j * std::numbers::pi / spec.as_margin));
    }
  }
  if (is_phoneme_aware(spec.variant) && spec.phoneme_grad_flow && !options.confidence_override) {
    for (std::size_t t = 0; t < st.phoneme_logits.rows(); ++t) {
      Vec z(st.phoneme_logits.row(t).begin(), st.phoneme_logits.row(t).end());
      std::partial_sort(z.begin(), z.begin() + 2, z.end(), std::greater<>());
      r.argmax_gap = std::min(r.argmax_gap, z[0] - z[1]);
    }
  }
  return r;
}

Vec extract_embedding(const ModelParams& params, const Mat& frames) {
  ForwardState st;
  check_frames(params, frames);
  run_encoder(params, frames, st);
  pool_into(hidden_of(st), st.mean, st.stddev, st.pooled);
  Vec e = params.embedding.bias;
  gemv_add(params.embedding.weight, st.pooled, e);
  return e;
}

}  // namespace apm
