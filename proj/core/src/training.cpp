#include "apm/training.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "apm/csv.hpp"
#include "apm/evaluation.hpp"
#include "parallel.hpp"

namespace apm {

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: " + std::to_string(params.size()) +
                                              " tensors but " + std::to_string(grads.size()) +
                                              " gradients");
  }
  if (state.first.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first.emplace_back(p.size(), 0.0);
      state.second.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: state holds a different tensor count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != state.first[i].size()) {
      throw Error(ErrorCode::ShapeMismatch, "adam_step: tensor " + std::to_string(i) +
                                                " shape differs");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    const auto g = grads[i];
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  spec.validate();
  if (epochs < 1) throw Error(ErrorCode::ConfigInvalid, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::ConfigInvalid, "batch_size must be >= 1");
  if (chunk_len < 1) throw Error(ErrorCode::ConfigInvalid, "chunk_len must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw Error(ErrorCode::ConfigInvalid, "learning rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw Error(ErrorCode::ConfigInvalid, "adam betas must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw Error(ErrorCode::ConfigInvalid, "adam epsilon must be > 0");
  if (!(weights.alpha >= 0.0) || !std::isfinite(weights.alpha)) {
    throw Error(ErrorCode::ConfigInvalid, "alpha must be finite and >= 0");
  }
}

std::vector<Vec> train_language_models(const ModelParams& params, const Corpus& corpus) {
  std::vector<std::vector<Vec>> by_language(params.config.num_languages);
  for (const Segment* seg : corpus.split(Split::Train)) {
    by_language.at(seg->language).push_back(extract_embedding(params, seg->frames));
  }
  return build_language_models(by_language);
}

DevMetrics evaluate_dev(const ModelParams& params, const Corpus& corpus) {
  const std::size_t languages = params.config.num_languages;
  const auto models = train_language_models(params, corpus);

  const auto dev = corpus.split(Split::Dev);
  std::map<std::string, Vec> embeddings;
  std::map<std::string, std::size_t> truth;
  for (const Segment* seg : dev) {
    embeddings.emplace(seg->id, extract_embedding(params, seg->frames));
    truth.emplace(seg->id, seg->language);
  }
  const TrialSet trials = make_trials(dev, languages);
  const ScoreMatrix scores = score_trials(models, embeddings, trials);
  return {closed_set_accuracy(scores, truth), compute_cavg(scores, trials).cavg};
}

TrainResult train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  const auto& cc = corpus.config;
  if (model_config.encoder.input_dim != cc.feature_dim ||
      model_config.num_languages != cc.num_languages ||
      model_config.num_phonemes != cc.num_phonemes) {
    throw Error(ErrorCode::ConfigInvalid, "model config does not match corpus dimensions");
  }
  const std::vector<Segment> chunks = chunk_segments(corpus, config.chunk_len, Split::Train);
  if (chunks.empty()) throw Error(ErrorCode::ConfigInvalid, "no training chunks");

  const MarginSpec& spec = config.spec;
  const bool cosine = uses_cosine_logits(spec.variant);
  const bool trace = config.trace_margins && is_phoneme_aware(spec.variant);

  TrainResult res;
  res.params = init_params(model_config, detail::splitmix64(config.seed), spec.variant);
  AdamState adam;
  ModelParams batch_grad = ModelParams::zeros_like(res.params);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches =
        make_batches(chunks.size(), config.batch_size, detail::splitmix64(config.seed ^ (epoch << 32)));
    double sum_total = 0.0, sum_lang = 0.0, sum_phone = 0.0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      std::vector<Gradients> per_sample(batch.size());
      detail::parallel_for(batch.size(), config.threads, [&](std::size_t i) {
        per_sample[i] = backward(res.params, chunks[batch[i]], spec, config.weights);
      });

      for (auto s : batch_grad.tensors()) std::fill(s.begin(), s.end(), 0.0);
      auto acc = batch_grad.tensors();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& g = per_sample[i];
        const auto& loss = g.loss;
        if (!std::isfinite(loss.total.loss)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << " batch " << b << " sample " << i << " ("
              << chunks[batch[i]].id << ")";
          throw Error(ErrorCode::DivergenceDetected, msg.str());
        }
        const auto src = g.grads.tensors();
        for (std::size_t t = 0; t < src.size(); ++t) {
          for (std::size_t k = 0; k < src[t].size(); ++k) acc[t][k] += src[t][k];
        }
        sum_total += loss.total.loss;
        sum_lang += loss.language_loss;
        sum_phone += loss.phoneme_loss;
        if (trace) {
          const double p = loss.total.phoneme_confidence;
          const double beta_p = spec.beta * p;
          res.trace.push_back({epoch, b, i, p, beta_p, spec.m + beta_p});
        }
      }
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (auto s : acc) {
        for (double& v : s) v *= scale;
        if (!all_finite(s)) {
          throw Error(ErrorCode::DivergenceDetected,
                      "non-finite gradient at epoch " + std::to_string(epoch) + " batch " +
                          std::to_string(b));
        }
      }
      const auto views = batch_grad.tensors();
      const std::vector<std::span<const double>> grads(views.begin(), views.end());
      const auto params = res.params.tensors();
      adam_step(params, grads, adam, config.adam);
      if (cosine) normalize_class_vectors(res.params);
    }

    EpochMetrics m;
    m.epoch = epoch;
    const double n = static_cast<double>(chunks.size());
    m.total_loss = sum_total / n;
    m.language_loss = sum_lang / n;
    m.phoneme_loss = sum_phone / n;
    if (config.evaluate_dev) {
      const DevMetrics dev = evaluate_dev(res.params, corpus);
      m.dev_accuracy = dev.accuracy;
      m.dev_cavg = dev.cavg;
    }
    res.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return res;
}

double mean_confidence(const MarginTrace& trace) {
  if (trace.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : trace) sum += r.p;
  return sum / static_cast<double>(trace.size());
}

void emit_margin_trace(const MarginTrace& trace, const std::filesystem::path& path) {
  if (trace.empty()) throw Error(ErrorCode::IoError, "refusing to write an empty margin trace");
  std::ostringstream out;
  out << "epoch,batch,sample,p,beta_p,P\n";
  for (const auto& r : trace) {
    out << r.epoch << ',' << r.batch << ',' << r.sample << ',' << format_double(r.p) << ','
        << format_double(r.beta_p) << ',' << format_double(r.margin) << '\n';
  }
  write_text_file(path, out.str());
}

MarginTrace read_margin_trace(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows.front() != CsvRow{"epoch", "batch", "sample", "p", "beta_p", "P"}) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": unexpected margin trace header");
  }
  MarginTrace trace;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 6) throw Error(ErrorCode::SchemaMismatch, "margin trace row width");
    trace.push_back({parse_index(r[0]), parse_index(r[1]), parse_index(r[2]), parse_double(r[3]),
                     parse_double(r[4]), parse_double(r[5])});
  }
  return trace;
}

void write_metrics(const MetricsLog& metrics, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "epoch,total_loss,language_loss,phoneme_loss,dev_accuracy,dev_cavg\n";
  for (const auto& m : metrics) {
    out << m.epoch << ',' << format_double(m.total_loss) << ',' << format_double(m.language_loss)
        << ',' << format_double(m.phoneme_loss) << ',' << format_double(m.dev_accuracy) << ','
        << format_double(m.dev_cavg) << '\n';
  }
  write_text_file(path, out.str());
}

MetricsLog read_metrics(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows.front() != CsvRow{"epoch", "total_loss", "language_loss", "phoneme_loss",
                                              "dev_accuracy", "dev_cavg"}) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": unexpected metrics header");
  }
  MetricsLog log;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 6) throw Error(ErrorCode::SchemaMismatch, "metrics row width");
    log.push_back({parse_index(r[0]), parse_double(r[1]), parse_double(r[2]), parse_double(r[3]),
                   parse_double(r[4]), parse_double(r[5])});
  }
  return log;
}

}  // namespace apm
