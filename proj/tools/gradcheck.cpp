#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "apm/model.hpp"
#include "apm/serialization.hpp"

namespace apm::cli {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kKink = 1e-3;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Outcome of one random point; nullopt means the point was screened out.
using CaseError = std::optional<double>;

Vec random_cosines(std::mt19937_64& rng, std::size_t& label) {
  const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
  std::uniform_real_distribution<double> u(-0.95, 0.95);
  Vec c(classes);
  for (double& v : c) v = u(rng);
  label = std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng);
  return c;
}

PhonemePosteriors random_posteriors(std::mt19937_64& rng) {
  const std::size_t frames = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
  const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 30)(rng);
  const double sharp = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
  std::normal_distribution<double> g(0.0, sharp);
  Mat m(frames, classes);
  for (std::size_t t = 0; t < frames; ++t) {
    Vec z(classes);
    for (double& v : z) v = g(rng);
    const Vec p = stable_softmax(z);
    std::copy(p.begin(), p.end(), m.row(t).begin());
  }
  return PhonemePosteriors(std::move(m));
}

// Loss-level case. The checked coordinates are the cosines (or logits)
// followed by the scalar the variant also differentiates: ||x|| for
// A-Softmax, the margin for the additive families.
CaseError loss_case(LossVariant variant, std::uint64_t case_seed, nlohmann::json* record) {
  std::mt19937_64 rng(case_seed);
  std::size_t label = 0;
  Vec x;
  std::function<LossResult(const Vec&)> eval;
  std::function<Vec(const LossResult&)> analytic;

  switch (variant) {
    case LossVariant::S: {
      std::normal_distribution<double> g(0.0, 3.0);
      x = random_cosines(rng, label);
      for (double& v : x) v = g(rng);
      eval = [label](const Vec& z) { return softmax_ce(z, label); };
      analytic = [](const LossResult& r) { return r.grad_cos; };
      break;
    }
    case LossVariant::AS: {
      const int mi = std::uniform_int_distribution<int>(1, 4)(rng);
      const double norm = std::uniform_real_distribution<double>(0.5, 5.0)(rng);
      x = random_cosines(rng, label);
      const double theta = std::acos(x[label]);
      for (int j = 1; j < mi; ++j) {
        if (std::abs(theta - j * kPi / mi) < kKink) return std::nullopt;
      }
      if (record) (*record)["as_margin"] = mi;
      x.push_back(norm);
      eval = [label, mi](const Vec& v) {
        const std::span<const double> cos(v.data(), v.size() - 1);
        return a_softmax_loss(v.back(), cos, MarginSpec::a_softmax(mi), label);
      };
      analytic = [](const LossResult& r) {
        Vec g = r.grad_cos;
        g.push_back(r.grad_norm);
        return g;
      };
      break;
    }
    default: {
      const bool phoneme = is_phoneme_aware(variant);
      const bool angular = variant == LossVariant::AAMS || variant == LossVariant::APAMS;
      const double m = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
      const double s = std::uniform_real_distribution<double>(1.0, 30.0)(rng);
      const double beta = phoneme ? std::uniform_real_distribution<double>(0.0, 2.0)(rng) : 0.0;
      x = random_cosines(rng, label);
      MarginSpec spec{variant, m, beta, s};
      PhonemeMargin pm{m, -1.0};
      if (phoneme) {
        pm = phoneme_aware_margin(random_posteriors(rng), spec);
        if (record) (*record)["p"] = pm.confidence;
      }
      if (angular && std::abs(std::acos(x[label]) + pm.margin - kPi) < kKink) return std::nullopt;
      if (record) {
        (*record)["m"] = m;
        (*record)["s"] = s;
        (*record)["beta"] = beta;
      }
      x.push_back(pm.margin);
      eval = [label, spec, pm](const Vec& v) {
        const std::span<const double> cos(v.data(), v.size() - 1);
        if (!is_phoneme_aware(spec.variant)) {
          return spec.variant == LossVariant::AMS
                     ? additive_margin_loss(cos, v.back(), spec.s, label)
                     : additive_angular_margin_loss(cos, v.back(), spec.s, label);
        }
        const PhonemeMargin moved{v.back(), pm.confidence};
        return margin_loss(cos, spec, label, &moved);
      };
      analytic = [](const LossResult& r) {
        Vec g = r.grad_cos;
        g.push_back(r.grad_margin);
        return g;
      };
      break;
    }
  }
  if (record) {
    (*record)["label"] = label;
    (*record)["point"] = x;
  }
  const Vec g = analytic(eval(x));
  const Vec fd = finite_diff_grad([&](const Vec& v) { return eval(v).loss; }, x);
  return relative_error(g, fd);
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.encoder.input_dim = 4;
  c.encoder.layer_dims = {6, 6};
  c.encoder.dilations = {1, 2};
  c.encoder.embedding_dim = 5;
  c.num_phonemes = 5;
  c.num_languages = 3;
  return c;
}

MarginSpec model_spec(LossVariant v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> m(0.0, 0.4), beta(0.0, 2.0), s(1.0, 10.0);
  switch (v) {
    case LossVariant::S: return MarginSpec::softmax();
    case LossVariant::AS: return MarginSpec::a_softmax(std::uniform_int_distribution<int>(1, 4)(rng));
    case LossVariant::AMS: return MarginSpec::am(m(rng), s(rng));
    case LossVariant::AAMS: return MarginSpec::aam(m(rng), s(rng));
    case LossVariant::APMS: return MarginSpec::apm(m(rng), beta(rng), s(rng));
    case LossVariant::APAMS: return MarginSpec::apam(m(rng), beta(rng), s(rng));
  }
  return {};
}

// End-to-end case: tiny network (D=4, H=6, C=3, C_p=5, T=8), every tensor
// checked; the phoneme confidence is pinned as in the stop-gradient training.
CaseError model_case(LossVariant variant, std::uint64_t case_seed, nlohmann::json* record) {
  std::mt19937_64 rng(case_seed);
  const ModelConfig config = tiny_model();
  const MarginSpec spec = model_spec(variant, rng);
  const ModelParams params = init_params(config, rng(), variant);
  const double alpha = std::uniform_real_distribution<double>(0.0, 2.0)(rng);

  Segment seg;
  seg.id = "gradcheck";
  seg.frames = Mat(8, config.encoder.input_dim);
  std::normal_distribution<double> g;
  for (double& v : seg.frames.data()) v = g(rng);
  seg.language = std::uniform_int_distribution<std::size_t>(0, config.num_languages - 1)(rng);
  std::uniform_int_distribution<std::size_t> ph(0, config.num_phonemes - 1);
  for (std::size_t t = 0; t < 8; ++t) seg.phonemes.push_back(ph(rng));

  ForwardOptions opt;
  if (is_phoneme_aware(variant)) {
    opt.confidence_override = multi_task_loss(params, seg, spec, {alpha}).total.phoneme_confidence;
  }
  const SmoothnessReport sm = smoothness(params, seg, spec, opt);
  if (sm.relu < kKink || sm.cosine_clamp < kKink || sm.angle < kKink || sm.variance < 1e-4 ||
      sm.argmax_gap < kKink) {
    return std::nullopt;
  }
  if (record) {
    (*record)["spec"] = spec;
    (*record)["alpha"] = alpha;
  }

  const MultiTaskWeights w{alpha};
  const Gradients grads = backward(params, seg, spec, w, opt);
  const auto analytic = grads.grads.tensors();
  double worst = 0.0;
  ModelParams probe = params;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const auto base = params.tensors()[k];
    const Vec x(base.begin(), base.end());
    const Vec fd = finite_diff_grad(
        [&](const Vec& v) {
          auto dst = probe.tensors()[k];
          std::copy(v.begin(), v.end(), dst.begin());
          return multi_task_loss(probe, seg, spec, w, opt).total.loss;
        },
        x);
    auto dst = probe.tensors()[k];
    std::copy(x.begin(), x.end(), dst.begin());
    const double err = relative_error(analytic[k], fd);
    if (err > worst) {
      worst = err;
      if (record) (*record)["worst_tensor"] = params.tensor_names()[k];
    }
  }
  return worst;
}

CaseError run_case(LossVariant variant, bool full, std::uint64_t case_seed, nlohmann::json* record) {
  return full ? model_case(variant, case_seed, record) : loss_case(variant, case_seed, record);
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& options) {
  GradcheckResult result;
  double worst_failure = -1.0;
  // Screened points are replaced so that `cases` points are actually checked.
  for (std::uint64_t draw = 0; result.checked < options.cases; ++draw) {
    const std::uint64_t case_seed = mix(options.seed ^ mix(draw));
    const CaseError err = run_case(options.variant, options.full_model, case_seed, nullptr);
    if (!err) {
      ++result.skipped;
      continue;
    }
    ++result.checked;
    result.worst_error = std::max(result.worst_error, *err);
    if (!(*err < options.tolerance)) {
      ++result.failures;
      if (*err > worst_failure) {
        worst_failure = *err;
        nlohmann::json rec{{"variant", std::string(to_string(options.variant))},
                           {"full_model", options.full_model},
                           {"case_seed", case_seed},
                           {"tolerance", options.tolerance}};
        run_case(options.variant, options.full_model, case_seed, &rec);
        rec["relative_error"] = *err;
        result.failing_case = std::move(rec);
      }
    }
  }
  return result;
}

double replay_case(const nlohmann::json& failing_case) {
  const auto variant = parse_loss_variant(failing_case.at("variant").get<std::string>());
  if (!variant) throw Error(ErrorCode::SchemaMismatch, "unknown variant in replay case");
  const CaseError err = run_case(*variant, failing_case.at("full_model").get<bool>(),
                                 failing_case.at("case_seed").get<std::uint64_t>(), nullptr);
  if (!err) throw Error(ErrorCode::SchemaMismatch, "replay case lies on a kink");
  return *err;
}

}  // namespace apm::cli
