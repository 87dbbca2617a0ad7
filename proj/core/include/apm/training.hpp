#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "apm/data.hpp"
#include "apm/losses.hpp"
#include "apm/model.hpp"

namespace apm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Vec> first;
  std::vector<Vec> second;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update over parallel lists of tensors. The state is
/// sized on first use; later calls must pass the same shapes (ShapeMismatch).
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state,
               const AdamConfig& config);

struct TrainConfig {
  MarginSpec spec = MarginSpec::softmax();
  MultiTaskWeights weights;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::size_t chunk_len = 100;
  AdamConfig adam;
  std::uint64_t seed = 1;
  bool trace_margins = true;
  bool evaluate_dev = true;
  std::size_t threads = 1;  // workers for per-sample gradients; results do not depend on it

  void validate() const;
};

struct TraceRow {
  std::size_t epoch = 0;   // 1-based
  std::size_t batch = 0;   // 0-based within the epoch
  std::size_t sample = 0;  // 0-based within the batch
  double p = 0.0;
  double beta_p = 0.0;
  double margin = 0.0;     // P_i = m + beta * p_i
};
using MarginTrace = std::vector<TraceRow>;

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double total_loss = 0.0;
  double language_loss = 0.0;
  double phoneme_loss = 0.0;
  double dev_accuracy = 0.0;
  double dev_cavg = 0.0;
};
using MetricsLog = std::vector<EpochMetrics>;

struct TrainResult {
  ModelParams params;
  MetricsLog metrics;
  MarginTrace trace;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training on fixed-length chunks of the train split. Throws
/// DivergenceDetected on a non-finite loss or gradient.
TrainResult train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Language centroids built from full train-split segments.
std::vector<Vec> train_language_models(const ModelParams& params, const Corpus& corpus);

// Dev-split metrics from centroids of full train-segment embeddings.
struct DevMetrics {
  double accuracy = 0.0;
  double cavg = 0.0;
};
DevMetrics evaluate_dev(const ModelParams& params, const Corpus& corpus);

double mean_confidence(const MarginTrace& trace);

// margin_trace.csv: epoch,batch,sample,p,beta_p,P
void emit_margin_trace(const MarginTrace& trace, const std::filesystem::path& path);
MarginTrace read_margin_trace(const std::filesystem::path& path);
// metrics.csv: epoch,total_loss,language_loss,phoneme_loss,dev_accuracy,dev_cavg
void write_metrics(const MetricsLog& metrics, const std::filesystem::path& path);
MetricsLog read_metrics(const std::filesystem::path& path);

}  // namespace apm
