#include "apm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace apm {

namespace {

std::string segment_id(const char* prefix, std::size_t language, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_l%02zu_%05zu", prefix, language, index);
  return buf;
}

class SegmentSampler {
 public:
  SegmentSampler(const Corpus& corpus, std::mt19937_64& rng) : corpus_(corpus), rng_(rng) {}

  Segment sample(std::size_t language, std::size_t length) {
    const auto& cfg = corpus_.config;
    const auto table = corpus_.language_tables.row(language);
    std::discrete_distribution<std::size_t> pick_phoneme(table.begin(), table.end());
    std::uniform_int_distribution<std::size_t> pick_dwell(cfg.min_dwell, cfg.max_dwell);
    std::uniform_int_distribution<std::size_t> any_phoneme(0, cfg.num_phonemes - 1);
    std::bernoulli_distribution corrupt(cfg.label_noise_rate);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Segment seg;
    seg.language = language;
    seg.frames = Mat(length, cfg.feature_dim);
    seg.phonemes.resize(length);
    std::size_t t = 0;
    while (t < length) {
      const std::size_t ph = pick_phoneme(rng_);
      const std::size_t end = std::min(length, t + pick_dwell(rng_));
      for (; t < end; ++t) {
        auto row = seg.frames.row(t);
        const auto mu = corpus_.phoneme_means.row(ph);
        const auto sd = corpus_.phoneme_stddevs.row(ph);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = mu[k] + sd[k] * gauss(rng_);
        seg.phonemes[t] = corrupt(rng_) ? any_phoneme(rng_) : ph;
      }
    }
    return seg;
  }

  std::size_t length() {
    const auto& cfg = corpus_.config;
    return std::uniform_int_distribution<std::size_t>(cfg.min_frames, cfg.max_frames)(rng_);
  }

 private:
  const Corpus& corpus_;
  std::mt19937_64& rng_;
};

}  // namespace

std::vector<std::string> test_conditions() { return {kShortUtterance, kCrossChannel, kOpenSet}; }

void CorpusConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, msg); };
  if (num_languages < 2) fail("num_languages must be >= 2");
  if (num_phonemes < 2) fail("num_phonemes must be >= 2");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (train_segments_per_language < 1 || dev_segments_per_language < 1 ||
      test_segments_per_language < 1) {
    fail("every split needs >= 1 segment per language");
  }
  if (min_frames < 2 || min_frames > max_frames) fail("frame range must satisfy 2 <= min <= max");
  if (min_dwell < 1 || min_dwell > max_dwell) fail("dwell range must satisfy 1 <= min <= max");
  if (!(language_phoneme_temperature > 0.0)) fail("temperature must be > 0");
  if (!(language_logit_scale >= 0.0)) fail("language_logit_scale must be >= 0");
  if (!(label_noise_rate >= 0.0 && label_noise_rate < 1.0)) fail("label_noise_rate must be in [0,1)");
  if (!(phoneme_separation >= 0.0)) fail("phoneme_separation must be >= 0");
  if (!(min_phoneme_stddev > 0.0 && min_phoneme_stddev <= max_phoneme_stddev)) {
    fail("phoneme stddev range must satisfy 0 < min <= max");
  }
  if (!(jitter_stddev >= 0.0)) fail("jitter_stddev must be >= 0");
  if (short_utt_frames < 2 || short_utt_frames > max_frames) {
    fail("short_utt_frames must be in [2, max_frames]");
  }
  if (!(channel_offset_stddev >= 0.0)) fail("channel_offset_stddev must be >= 0");
}

std::vector<const Segment*> Corpus::split(Split s, const std::string& condition) const {
  std::vector<const Segment*> out;
  for (const auto& seg : segments) {
    if (seg.split == s && (condition.empty() || seg.condition == condition)) out.push_back(&seg);
  }
  return out;
}

const Segment* Corpus::find(const std::string& id) const {
  for (const auto& seg : segments) {
    if (seg.id == id) return &seg;
  }
  return nullptr;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> spread(config.min_phoneme_stddev,
                                                config.max_phoneme_stddev);

  const std::size_t cp = config.num_phonemes, dim = config.feature_dim;
  corpus.phoneme_means = Mat(cp, dim);
  corpus.phoneme_stddevs = Mat(cp, dim);
  for (double& v : corpus.phoneme_means.data()) v = config.phoneme_separation * gauss(rng);
  for (double& v : corpus.phoneme_stddevs.data()) v = spread(rng);

  const std::size_t all_languages = config.num_languages + config.num_nontarget_languages;
  corpus.language_tables = Mat(all_languages, cp);
  for (std::size_t l = 0; l < all_languages; ++l) {
    Vec logits(cp);
    for (double& v : logits) {
      v = config.language_logit_scale * gauss(rng) / config.language_phoneme_temperature;
    }
    const Vec table = stable_softmax(logits);
    std::copy(table.begin(), table.end(), corpus.language_tables.row(l).begin());
  }

  SegmentSampler sampler(corpus, rng);
  auto emit = [&](Segment seg, std::string id, Split split, std::string condition) {
    seg.id = std::move(id);
    seg.split = split;
    seg.condition = std::move(condition);
    corpus.segments.push_back(std::move(seg));
  };

  for (std::size_t l = 0; l < config.num_languages; ++l) {
    for (std::size_t i = 0; i < config.train_segments_per_language; ++i) {
      Segment seg = sampler.sample(l, sampler.length());
      if (config.feature_jitter) {
        for (double& v : seg.frames.data()) v += config.jitter_stddev * gauss(rng);
      }
      emit(std::move(seg), segment_id("train", l, i), Split::Train, {});
    }
  }
  for (std::size_t l = 0; l < config.num_languages; ++l) {
    for (std::size_t i = 0; i < config.dev_segments_per_language; ++i) {
      emit(sampler.sample(l, sampler.length()), segment_id("dev", l, i), Split::Dev, {});
    }
  }
  for (std::size_t l = 0; l < config.num_languages; ++l) {
    for (std::size_t i = 0; i < config.test_segments_per_language; ++i) {
      emit(sampler.sample(l, config.short_utt_frames), segment_id("short", l, i), Split::Test,
           kShortUtterance);
    }
  }
  for (std::size_t l = 0; l < config.num_languages; ++l) {
    for (std::size_t i = 0; i < config.test_segments_per_language; ++i) {
      Segment seg = sampler.sample(l, sampler.length());
      Vec offset(dim);
      for (double& v : offset) v = config.channel_offset_stddev * gauss(rng);
      for (std::size_t t = 0; t < seg.length(); ++t) {
        auto row = seg.frames.row(t);
        for (std::size_t k = 0; k < dim; ++k) row[k] += offset[k];
      }
      emit(std::move(seg), segment_id("channel", l, i), Split::Test, kCrossChannel);
    }
  }
  for (std::size_t l = 0; l < all_languages; ++l) {
    for (std::size_t i = 0; i < config.test_segments_per_language; ++i) {
      emit(sampler.sample(l, sampler.length()), segment_id("open", l, i), Split::Test, kOpenSet);
    }
  }
  return corpus;
}

std::vector<Segment> chunk_segments(const std::vector<const Segment*>& segments,
                                    std::size_t chunk_len) {
  if (chunk_len < 1) throw Error(ErrorCode::ChunkTooLong, "chunk length must be >= 1");
  std::vector<Segment> chunks;
  for (const Segment* seg : segments) {
    if (seg->length() < chunk_len) {
      throw Error(ErrorCode::ChunkTooLong, "segment " + seg->id + " has " +
                                               std::to_string(seg->length()) +
                                               " frames, chunk length is " +
                                               std::to_string(chunk_len));
    }
    const std::size_t count = seg->length() / chunk_len;
    const std::size_t dim = seg->frames.cols();
    for (std::size_t c = 0; c < count; ++c) {
      Segment chunk;
      chunk.id = seg->id + "@" + std::to_string(c * chunk_len);
      chunk.language = seg->language;
      chunk.split = seg->split;
      chunk.condition = seg->condition;
      const auto first = seg->frames.data().begin() + static_cast<std::ptrdiff_t>(c * chunk_len * dim);
      chunk.frames = Mat(chunk_len, dim,
                         std::vector<double>(first, first + static_cast<std::ptrdiff_t>(chunk_len * dim)));
      const auto lab = seg->phonemes.begin() + static_cast<std::ptrdiff_t>(c * chunk_len);
      chunk.phonemes.assign(lab, lab + static_cast<std::ptrdiff_t>(chunk_len));
      chunks.push_back(std::move(chunk));
    }
  }
  return chunks;
}

std::vector<Segment> chunk_segments(const Corpus& corpus, std::size_t chunk_len, Split split) {
  return chunk_segments(corpus.split(split), chunk_len);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t epoch_seed) {
  if (batch_size < 1) throw Error(ErrorCode::ConfigInvalid, "batch size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size) {
    const std::size_t end = std::min(count, i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace apm
