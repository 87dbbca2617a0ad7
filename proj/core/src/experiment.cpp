#include "apm/experiment.hpp"

#include <chrono>

namespace apm {

std::map<std::string, ConditionResult> evaluate_conditions(const ModelParams& params,
                                                           const Corpus& corpus) {
  const auto models = train_language_models(params, corpus);
  const std::size_t languages = params.config.num_languages;
  std::map<std::string, ConditionResult> out;
  for (const auto& condition : test_conditions()) {
    const auto segments = corpus.split(Split::Test, condition);
    if (segments.empty()) continue;
    ConditionResult res;
    res.trials = make_trials(segments, languages);
    std::map<std::string, Vec> embeddings;
    std::map<std::string, std::size_t> truth;
    for (const Segment* seg : segments) {
      embeddings.emplace(seg->id, extract_embedding(params, seg->frames));
      if (seg->language < languages) truth.emplace(seg->id, seg->language);
    }
    res.scores = score_trials(models, embeddings, res.trials);
    res.cavg = compute_cavg(res.scores, res.trials);
    res.accuracy = closed_set_accuracy(res.scores, truth);
    out.emplace(condition, std::move(res));
  }
  return out;
}

SystemResult run_system(const Corpus& corpus, const ModelConfig& model_config,
                        const SystemSpec& system) {
  const auto start = std::chrono::steady_clock::now();
  SystemResult res;
  res.system = system;
  res.training = train(corpus, model_config, system.train);
  res.conditions = evaluate_conditions(res.training.params, corpus);
  res.mean_p = mean_confidence(res.training.trace);
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<SystemSpec> comparison_systems(const TrainConfig& base) {
  auto with = [&](MarginSpec spec, double alpha) {
    TrainConfig c = base;
    spec.s = base.spec.s;
    c.spec = spec;
    c.weights.alpha = alpha;
    return c;
  };
  const double alpha = base.weights.alpha > 0.0 ? base.weights.alpha : 1.0;
  return {
      {"x-vector", with(MarginSpec::softmax(), 0.0)},
      {"MT x-vector", with(MarginSpec::softmax(), alpha)},
      {"MT x-vector", with(MarginSpec::am(0.2), alpha)},
      {"MT x-vector", with(MarginSpec::am(0.02), alpha)},
      {"MT x-vector", with(MarginSpec::apm(0.2, 10.0), alpha)},
      {"MT x-vector", with(MarginSpec::aam(0.2), alpha)},
      {"MT x-vector", with(MarginSpec::aam(0.02), alpha)},
      {"MT x-vector", with(MarginSpec::apam(0.2, 10.0), alpha)},
  };
}

ReportRow report_row(const SystemResult& result) {
  ReportRow row;
  row.system = result.system.label;
  row.spec = result.system.train.spec;
  if (is_phoneme_aware(row.spec.variant)) row.mean_p = result.mean_p;
  for (const auto& condition : test_conditions()) {
    const auto it = result.conditions.find(condition);
    if (it != result.conditions.end()) row.cavg.emplace_back(condition, it->second.cavg.cavg);
  }
  return row;
}

}  // namespace apm
