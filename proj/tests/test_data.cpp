#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>

#include "apm/data.hpp"

using namespace apm;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_config(std::uint64_t seed = 1) {
  CorpusConfig c;
  c.num_languages = 3;
  c.num_nontarget_languages = 1;
  c.num_phonemes = 8;
  c.feature_dim = 4;
  c.train_segments_per_language = 10;
  c.dev_segments_per_language = 4;
  c.test_segments_per_language = 3;
  c.min_frames = 40;
  c.max_frames = 60;
  c.short_utt_frames = 20;
  c.seed = seed;
  return c;
}

// Classifies each dev segment by the log-likelihood of its phoneme labels
// under add-one-smoothed unigram tables estimated from the train labels.
double unigram_oracle_accuracy(const Corpus& corpus) {
  const std::size_t langs = corpus.config.num_languages, cp = corpus.config.num_phonemes;
  std::vector<std::vector<double>> counts(langs, std::vector<double>(cp, 1.0));
  for (const Segment* s : corpus.split(Split::Train)) {
    for (std::size_t ph : s->phonemes) counts[s->language][ph] += 1.0;
  }
  for (auto& row : counts) {
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& v : row) v = std::log(v / total);
  }
  std::size_t correct = 0, total = 0;
  for (const Segment* s : corpus.split(Split::Dev)) {
    std::size_t best = 0;
    double best_ll = -INFINITY;
    for (std::size_t l = 0; l < langs; ++l) {
      double ll = 0.0;
      for (std::size_t ph : s->phonemes) ll += counts[l][ph];
      if (ll > best_ll) {
        best_ll = ll;
        best = l;
      }
    }
    correct += best == s->language;
    ++total;
  }
  return double(correct) / double(total);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("generate_corpus layout") {
  const auto cfg = small_config();
  const auto corpus = generate_corpus(cfg);
  CHECK(corpus.language_tables.rows() == 4);
  CHECK(corpus.language_tables.cols() == 8);
  for (std::size_t l = 0; l < 4; ++l) {
    double sum = 0.0;
    for (double v : corpus.language_tables.row(l)) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(corpus.split(Split::Train).size() == 30);
  CHECK(corpus.split(Split::Dev).size() == 12);
  CHECK(corpus.split(Split::Test, kShortUtterance).size() == 9);
  CHECK(corpus.split(Split::Test, kCrossChannel).size() == 9);
  CHECK(corpus.split(Split::Test, kOpenSet).size() == 12);

  for (const auto& s : corpus.segments) {
    CHECK(s.phonemes.size() == s.length());
    CHECK(s.frames.cols() == cfg.feature_dim);
    for (std::size_t ph : s.phonemes) CHECK(ph < cfg.num_phonemes);
    if (s.condition == kShortUtterance) {
      CHECK(s.length() == cfg.short_utt_frames);
    } else {
      CHECK(s.length() >= cfg.min_frames);
      CHECK(s.length() <= cfg.max_frames);
    }
    if (s.condition == kOpenSet) {
      CHECK(s.language < 4);
    } else {
      CHECK(s.language < 3);
    }
  }
  std::set<std::size_t> open_langs;
  for (const Segment* s : corpus.split(Split::Test, kOpenSet)) open_langs.insert(s->language);
  CHECK(open_langs.count(3) == 1);

  REQUIRE(corpus.find("train_l01_00002") != nullptr);
  CHECK(corpus.find("train_l01_00002")->language == 1);
  CHECK(corpus.find("nope") == nullptr);
}

TEST_CASE("splits are disjoint and cover every language") {
  const auto corpus = generate_corpus(small_config(3));
  std::set<std::string> ids;
  for (const auto& s : corpus.segments) CHECK(ids.insert(s.id).second);
  for (Split sp : {Split::Train, Split::Dev, Split::Test}) {
    std::set<std::size_t> langs;
    for (const Segment* s : corpus.split(sp)) langs.insert(s->language);
    for (std::size_t l = 0; l < 3; ++l) CHECK(langs.count(l) == 1);
  }
}

TEST_CASE("generation is deterministic") {
  const auto a = generate_corpus(small_config(5));
  const auto b = generate_corpus(small_config(5));
  REQUIRE(a.segments.size() == b.segments.size());
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    CHECK(a.segments[i].id == b.segments[i].id);
    CHECK(a.segments[i].frames == b.segments[i].frames);
    CHECK(a.segments[i].phonemes == b.segments[i].phonemes);
  }
  CHECK(a.language_tables == b.language_tables);
  const auto c = generate_corpus(small_config(6));
  CHECK(!(a.segments[0].frames == c.segments[0].frames));

  const auto root = fs::temp_directory_path() / "apm_test_data_det";
  fs::remove_all(root);
  save_corpus(a, root / "a");
  save_corpus(b, root / "b");
  CHECK(directory_bytes(root / "a") == directory_bytes(root / "b"));
  fs::remove_all(root);
}

TEST_CASE("flat language tables leave a unigram classifier at chance") {
  auto cfg = small_config(7);
  cfg.num_languages = 4;
  cfg.train_segments_per_language = 40;
  cfg.dev_segments_per_language = 50;
  cfg.language_phoneme_temperature = 1e6;
  const double chance = 1.0 / 4.0;
  const double acc = unigram_oracle_accuracy(generate_corpus(cfg));
  // 200 dev segments: binomial stddev around chance is about 0.03.
  CHECK(std::abs(acc - chance) < 0.12);

  cfg.language_phoneme_temperature = 1.0;
  CHECK(unigram_oracle_accuracy(generate_corpus(cfg)) > 0.9);
}

TEST_CASE("noise-free labels follow the language table (chi-square)") {
  auto cfg = small_config(9);
  cfg.num_phonemes = 5;
  cfg.label_noise_rate = 0.0;
  // One frame per phoneme state makes frame labels independent draws.
  cfg.min_dwell = cfg.max_dwell = 1;
  cfg.min_frames = cfg.max_frames = 400;
  cfg.language_logit_scale = 0.5;
  const auto corpus = generate_corpus(cfg);
  const double critical = 18.4668;  // chi-square, 4 dof, upper 0.001 tail
  for (const Segment* s : corpus.split(Split::Train)) {
    std::vector<double> observed(5, 0.0);
    for (std::size_t ph : s->phonemes) observed[ph] += 1.0;
    double chi2 = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      const double expected = corpus.language_tables(s->language, k) * double(s->length());
      chi2 += (observed[k] - expected) * (observed[k] - expected) / expected;
    }
    CHECK(chi2 < critical);
  }
}

TEST_CASE("label noise corrupts about the configured fraction") {
  auto cfg = small_config(10);
  cfg.label_noise_rate = 0.0;
  const auto clean = generate_corpus(cfg);
  cfg.label_noise_rate = 0.3;
  const auto noisy = generate_corpus(cfg);
  // Noise draws shift the random stream, so compare run structure instead:
  // within a dwell run, a clean corpus never changes label mid-run.
  std::size_t changes_clean = 0, changes_noisy = 0, frames = 0;
  for (const Segment* s : clean.split(Split::Train)) {
    for (std::size_t t = 1; t < s->length(); ++t) changes_clean += s->phonemes[t] != s->phonemes[t - 1];
  }
  for (const Segment* s : noisy.split(Split::Train)) {
    frames += s->length();
    for (std::size_t t = 1; t < s->length(); ++t) changes_noisy += s->phonemes[t] != s->phonemes[t - 1];
  }
  CHECK(changes_noisy > 3 * changes_clean);
  CHECK(double(changes_noisy) / double(frames) < 0.6);
}

TEST_CASE("separability dial") {
  const double temps[] = {0.5, 2.0, 8.0};
  double mean_acc[3] = {0.0, 0.0, 0.0};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int k = 0; k < 3; ++k) {
      auto cfg = small_config(seed);
      cfg.num_languages = 4;
      cfg.num_phonemes = 20;
      cfg.min_frames = cfg.max_frames = 30;
      cfg.dev_segments_per_language = 25;
      cfg.language_phoneme_temperature = temps[k];
      mean_acc[k] += unigram_oracle_accuracy(generate_corpus(cfg)) / 5.0;
    }
  }
  CAPTURE(mean_acc[0]);
  CAPTURE(mean_acc[1]);
  CAPTURE(mean_acc[2]);
  CHECK(mean_acc[0] > mean_acc[1]);
  CHECK(mean_acc[1] > mean_acc[2]);
}

TEST_CASE("config validation") {
  auto expect_invalid = [](CorpusConfig c) {
    try {
      generate_corpus(c);
      FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConfigInvalid);
    }
  };
  auto c = small_config();
  c.num_languages = 1;
  expect_invalid(c);
  c = small_config();
  c.num_phonemes = 1;
  expect_invalid(c);
  c = small_config();
  c.label_noise_rate = 1.0;
  expect_invalid(c);
  c = small_config();
  c.min_frames = 70;
  expect_invalid(c);
  c = small_config();
  c.language_phoneme_temperature = 0.0;
  expect_invalid(c);
}

TEST_CASE("chunk_segments") {
  Segment s;
  s.id = "x";
  s.language = 2;
  s.frames = Mat(250, 3);
  for (std::size_t i = 0; i < s.frames.data().size(); ++i) s.frames.data()[i] = double(i);
  for (std::size_t t = 0; t < 250; ++t) s.phonemes.push_back(t % 7);

  const auto chunks = chunk_segments({&s}, 100);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].id == "x@0");
  CHECK(chunks[1].id == "x@100");
  CHECK(chunks[1].language == 2);
  CHECK(chunks[1].frames(0, 0) == s.frames(100, 0));
  CHECK(chunks[1].phonemes[0] == s.phonemes[100]);
  CHECK(chunks[1].phonemes.size() == 100);

  const auto whole = chunk_segments({&s}, 250);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].frames == s.frames);
  CHECK(whole[0].phonemes == s.phonemes);

  try {
    chunk_segments({&s}, 251);
    FAIL("expected ChunkTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ChunkTooLong);
  }

  const auto corpus = generate_corpus(small_config(11));
  std::size_t corpus_frames = 0;
  for (const Segment* seg : corpus.split(Split::Train)) corpus_frames += seg->length();
  std::size_t chunk_frames = 0;
  for (const auto& c : chunk_segments(corpus, 25)) chunk_frames += c.length();
  CHECK(chunk_frames <= corpus_frames);
}

TEST_CASE("make_batches") {
  const auto b = make_batches(130, 64, 42);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 64);
  CHECK(b[1].size() == 64);
  CHECK(b[2].size() == 2);
  CHECK(make_batches(130, 64, 42) == b);
  CHECK(make_batches(130, 64, 43) != b);

  std::vector<std::size_t> all;
  for (const auto& batch : b) all.insert(all.end(), batch.begin(), batch.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 130; ++i) CHECK(all[i] == i);

  CHECK(make_batches(0, 8, 1).empty());
  CHECK_THROWS_AS(make_batches(10, 0, 1), Error);
}

TEST_CASE("corpus save and load round trip") {
  const auto dir = fs::temp_directory_path() / "apm_test_data_io";
  fs::remove_all(dir);
  auto cfg = small_config(12);
  cfg.feature_jitter = true;
  const auto corpus = generate_corpus(cfg);
  save_corpus(corpus, dir);
  CHECK(fs::exists(dir / "meta.json"));
  CHECK(fs::exists(dir / "segments" / "train_l00_00000.seg"));

  const auto back = load_corpus(dir);
  CHECK(back.config.seed == cfg.seed);
  CHECK(back.config.feature_jitter);
  CHECK(back.language_tables == corpus.language_tables);
  CHECK(back.phoneme_means == corpus.phoneme_means);
  CHECK(back.phoneme_stddevs == corpus.phoneme_stddevs);
  REQUIRE(back.segments.size() == corpus.segments.size());
  for (std::size_t i = 0; i < corpus.segments.size(); ++i) {
    const auto& a = corpus.segments[i];
    const auto& b = back.segments[i];
    CHECK(a.id == b.id);
    CHECK(a.language == b.language);
    CHECK(a.split == b.split);
    CHECK(a.condition == b.condition);
    CHECK(a.frames == b.frames);
    CHECK(a.phonemes == b.phonemes);
  }

  {
    std::ofstream out(dir / "segments" / "dev_l00_00000.seg", std::ios::binary);
    out << "NOTASEG!";
  }
  try {
    load_corpus(dir);
    FAIL("expected SchemaMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaMismatch);
  }
  std::ofstream(dir / "meta.json") << R"({"format":"apm-corpus","version":7})";
  CHECK_THROWS_AS(load_corpus(dir), Error);
  CHECK_THROWS_AS(load_corpus(dir / "does-not-exist"), Error);
  fs::remove_all(dir);
}
