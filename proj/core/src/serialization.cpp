#include "apm/serialization.hpp"

#include <set>
#include <string>

namespace apm {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, std::string(what) + " must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw Error(ErrorCode::ConfigInvalid, std::string("unknown key '") + key + "' in " + what);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void to_json(json& j, const CorpusConfig& c) {
  j = json{{"num_languages", c.num_languages},
           {"num_nontarget_languages", c.num_nontarget_languages},
           {"num_phonemes", c.num_phonemes},
           {"feature_dim", c.feature_dim},
           {"train_segments_per_language", c.train_segments_per_language},
           {"dev_segments_per_language", c.dev_segments_per_language},
           {"test_segments_per_language", c.test_segments_per_language},
           {"min_frames", c.min_frames},
           {"max_frames", c.max_frames},
           {"min_dwell", c.min_dwell},
           {"max_dwell", c.max_dwell},
           {"language_phoneme_temperature", c.language_phoneme_temperature},
           {"language_logit_scale", c.language_logit_scale},
           {"label_noise_rate", c.label_noise_rate},
           {"phoneme_separation", c.phoneme_separation},
           {"min_phoneme_stddev", c.min_phoneme_stddev},
           {"max_phoneme_stddev", c.max_phoneme_stddev},
           {"feature_jitter", c.feature_jitter},
           {"jitter_stddev", c.jitter_stddev},
           {"short_utt_frames", c.short_utt_frames},
           {"channel_offset_stddev", c.channel_offset_stddev},
           {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  reject_unknown(j,
                 {"num_languages", "num_nontarget_languages", "num_phonemes", "feature_dim",
                  "train_segments_per_language", "dev_segments_per_language",
                  "test_segments_per_language", "min_frames", "max_frames", "min_dwell",
                  "max_dwell", "language_phoneme_temperature", "language_logit_scale",
                  "label_noise_rate", "phoneme_separation", "min_phoneme_stddev",
                  "max_phoneme_stddev", "feature_jitter", "jitter_stddev", "short_utt_frames",
                  "channel_offset_stddev", "seed"},
                 "corpus config");
  read(j, "num_languages", c.num_languages);
  read(j, "num_nontarget_languages", c.num_nontarget_languages);
  read(j, "num_phonemes", c.num_phonemes);
  read(j, "feature_dim", c.feature_dim);
  read(j, "train_segments_per_language", c.train_segments_per_language);
  read(j, "dev_segments_per_language", c.dev_segments_per_language);
  read(j, "test_segments_per_language", c.test_segments_per_language);
  read(j, "min_frames", c.min_frames);
  read(j, "max_frames", c.max_frames);
  read(j, "min_dwell", c.min_dwell);
  read(j, "max_dwell", c.max_dwell);
  read(j, "language_phoneme_temperature", c.language_phoneme_temperature);
  read(j, "language_logit_scale", c.language_logit_scale);
  read(j, "label_noise_rate", c.label_noise_rate);
  read(j, "phoneme_separation", c.phoneme_separation);
  read(j, "min_phoneme_stddev", c.min_phoneme_stddev);
  read(j, "max_phoneme_stddev", c.max_phoneme_stddev);
  read(j, "feature_jitter", c.feature_jitter);
  read(j, "jitter_stddev", c.jitter_stddev);
  read(j, "short_utt_frames", c.short_utt_frames);
  read(j, "channel_offset_stddev", c.channel_offset_stddev);
  read(j, "seed", c.seed);
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"input_dim", c.input_dim},
           {"layer_dims", c.layer_dims},
           {"dilations", c.dilations},
           {"embedding_dim", c.embedding_dim}};
}

void from_json(const json& j, EncoderConfig& c) {
  reject_unknown(j, {"input_dim", "layer_dims", "dilations", "embedding_dim"}, "encoder config");
  read(j, "input_dim", c.input_dim);
  read(j, "layer_dims", c.layer_dims);
  read(j, "dilations", c.dilations);
  read(j, "embedding_dim", c.embedding_dim);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"encoder", c.encoder},
           {"num_phonemes", c.num_phonemes},
           {"num_languages", c.num_languages},
           {"normalize_embedding", c.normalize_embedding}};
}

void from_json(const json& j, ModelConfig& c) {
  reject_unknown(j, {"encoder", "num_phonemes", "num_languages", "normalize_embedding"},
                 "model config");
  if (j.contains("encoder")) from_json(j.at("encoder"), c.encoder);
  read(j, "num_phonemes", c.num_phonemes);
  read(j, "num_languages", c.num_languages);
  read(j, "normalize_embedding", c.normalize_embedding);
}

void to_json(json& j, const MarginSpec& c) {
  j = json{{"variant", std::string(to_string(c.variant))},
           {"m", c.m},
           {"beta", c.beta},
           {"s", c.s},
           {"as_margin", c.as_margin},
           {"phoneme_grad_flow", c.phoneme_grad_flow}};
}

void from_json(const json& j, MarginSpec& c) {
  reject_unknown(j, {"variant", "m", "beta", "s", "as_margin", "phoneme_grad_flow"}, "loss config");
  if (j.contains("variant")) {
    std::string name;
    read(j, "variant", name);
    const auto v = parse_loss_variant(name);
    if (!v) throw Error(ErrorCode::ConfigInvalid, "unknown loss variant '" + name + "'");
    c.variant = *v;
  }
  read(j, "m", c.m);
  read(j, "beta", c.beta);
  read(j, "s", c.s);
  read(j, "as_margin", c.as_margin);
  read(j, "phoneme_grad_flow", c.phoneme_grad_flow);
}

void to_json(json& j, const AdamConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"epsilon", c.epsilon}};
}

void from_json(const json& j, AdamConfig& c) {
  reject_unknown(j, {"learning_rate", "beta1", "beta2", "epsilon"}, "adam config");
  read(j, "learning_rate", c.learning_rate);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "epsilon", c.epsilon);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"loss", c.spec},
           {"alpha", c.weights.alpha},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"chunk_len", c.chunk_len},
           {"adam", c.adam},
           {"seed", c.seed},
           {"trace_margins", c.trace_margins},
           {"evaluate_dev", c.evaluate_dev},
           {"threads", c.threads}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"loss", "alpha", "epochs", "batch_size", "chunk_len", "adam", "seed",
                  "trace_margins", "evaluate_dev", "threads"},
                 "train config");
  if (j.contains("loss")) from_json(j.at("loss"), c.spec);
  read(j, "alpha", c.weights.alpha);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "chunk_len", c.chunk_len);
  if (j.contains("adam")) from_json(j.at("adam"), c.adam);
  read(j, "seed", c.seed);
  read(j, "trace_margins", c.trace_margins);
  read(j, "evaluate_dev", c.evaluate_dev);
  read(j, "threads", c.threads);
}

}  // namespace apm
