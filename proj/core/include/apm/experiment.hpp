#pragma once

#include <map>
#include <string>
#include <vector>

#include "apm/data.hpp"
#include "apm/evaluation.hpp"
#include "apm/model.hpp"
#include "apm/training.hpp"

namespace apm {

/// Scores, trials and metrics for one test condition.
struct ConditionResult {
  TrialSet trials;
  ScoreMatrix scores;
  CavgReport cavg;
  double accuracy = 0.0;  // closed-set accuracy over utterances of model languages
};

/// Centroids from the train split, then every test condition of the corpus.
std::map<std::string, ConditionResult> evaluate_conditions(const ModelParams& params,
                                                           const Corpus& corpus);

struct SystemSpec {
  std::string label;  // "x-vector" (single task) or "MT x-vector"
  TrainConfig train;
};

struct SystemResult {
  SystemSpec system;
  TrainResult training;
  std::map<std::string, ConditionResult> conditions;
  double mean_p = 0.0;  // mean traced p_i, 0 when the variant has no phoneme margin
  double seconds = 0.0;
};

SystemResult run_system(const Corpus& corpus, const ModelConfig& model_config,
                        const SystemSpec& system);

/// The eight-system comparison matrix: softmax single-task and multi-task,
/// then AM/AAM at m = 0.2 and m = 0.02 and the phoneme-aware variants at
/// m = 0.2, beta = 10. `base` supplies everything but the loss settings.
std::vector<SystemSpec> comparison_systems(const TrainConfig& base);

ReportRow report_row(const SystemResult& result);

}  // namespace apm
