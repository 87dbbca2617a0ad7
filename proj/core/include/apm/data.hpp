#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apm/numerics.hpp"
#include "apm/segment.hpp"

namespace apm {

// Test-condition tags. Each names how a test split departs from training.
inline constexpr const char* kShortUtterance = "short_utt";
inline constexpr const char* kCrossChannel = "cross_channel";
inline constexpr const char* kOpenSet = "open_set";
std::vector<std::string> test_conditions();

/// Synthetic multilingual corpus. Each language is a unigram distribution
/// over a shared inventory of virtual phonemes; a phoneme state emits frames
/// from a diagonal Gaussian for `dwell` consecutive frames.
struct CorpusConfig {
  std::size_t num_languages = 6;
  std::size_t num_nontarget_languages = 2;
  std::size_t num_phonemes = 40;
  std::size_t feature_dim = 23;

  std::size_t train_segments_per_language = 100;
  std::size_t dev_segments_per_language = 20;
  std::size_t test_segments_per_language = 20;  // per condition

  std::size_t min_frames = 100;
  std::size_t max_frames = 150;
  std::size_t min_dwell = 5;
  std::size_t max_dwell = 20;

  // Language tables are softmax(logits / temperature) with standard-normal
  // logits scaled by language_logit_scale. Large temperatures flatten every
  // table towards uniform, making languages indistinguishable.
  double language_phoneme_temperature = 1.0;
  double language_logit_scale = 2.0;
  double label_noise_rate = 0.1;

  double phoneme_separation = 1.0;  // stddev of phoneme means
  double min_phoneme_stddev = 0.5;
  double max_phoneme_stddev = 1.0;

  bool feature_jitter = false;  // extra Gaussian noise on training frames
  double jitter_stddev = 0.1;

  std::size_t short_utt_frames = 30;
  double channel_offset_stddev = 0.5;

  std::uint64_t seed = 1;

  void validate() const;
};

struct Corpus {
  CorpusConfig config;
  std::vector<Segment> segments;
  Mat language_tables;  // (C + nontarget) x C_p, rows sum to 1
  Mat phoneme_means;    // C_p x D
  Mat phoneme_stddevs;  // C_p x D

  std::vector<const Segment*> split(Split s, const std::string& condition = {}) const;
  const Segment* find(const std::string& id) const;
};

Corpus generate_corpus(const CorpusConfig& config);

/// Cut each segment into floor(T_seg / chunk_len) consecutive chunks; the
/// tail is dropped. Throws ChunkTooLong if any segment is shorter than chunk_len.
std::vector<Segment> chunk_segments(const std::vector<const Segment*>& segments,
                                    std::size_t chunk_len);
std::vector<Segment> chunk_segments(const Corpus& corpus, std::size_t chunk_len,
                                    Split split = Split::Train);

/// Seeded shuffle of [0, count) split into batches; the last short batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t epoch_seed);

// On-disk corpus: <dir>/meta.json plus <dir>/segments/<id>.seg, a little-endian
// binary file: 8-byte magic "APMSEG01", uint64 T, uint64 D, T*D float64
// features (row-major), T uint32 phoneme labels.
inline constexpr int kCorpusVersion = 1;
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace apm
