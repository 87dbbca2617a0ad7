#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apm/losses.hpp"
#include "apm/numerics.hpp"
#include "apm/segment.hpp"

namespace apm {

struct Trial {
  std::string utterance;
  std::size_t target = 0;              // model (target language) the utterance is scored against
  bool is_target = false;              // true when the utterance is spoken in `target`
  std::size_t utterance_language = 0;  // may lie outside the model set (open-set trials)
};

struct TrialSet {
  std::vector<Trial> trials;
};

/// Every utterance in `segments` against every model language in [0, num_languages).
TrialSet make_trials(std::span<const Segment* const> segments, std::size_t num_languages);

/// One score per (utterance, model language).
class ScoreMatrix {
 public:
  explicit ScoreMatrix(std::size_t num_languages = 0) : num_languages_(num_languages) {}

  void set(const std::string& utterance, std::size_t language, double score);
  void set_row(const std::string& utterance, Vec scores);
  /// Throws UnknownUtterance / UnknownLanguage.
  double at(const std::string& utterance, std::size_t language) const;
  bool contains(const std::string& utterance) const { return rows_.count(utterance) != 0; }

  std::size_t num_languages() const noexcept { return num_languages_; }
  const std::map<std::string, Vec>& rows() const noexcept { return rows_; }

 private:
  std::size_t num_languages_;
  std::map<std::string, Vec> rows_;
};

struct PairFalseAlarm {
  std::size_t target = 0;
  std::size_t nontarget = 0;
  double rate = 0.0;
};

struct CavgReport {
  double cavg = 0.0;
  double threshold = 0.0;
  std::map<std::size_t, double> p_miss;  // per target language
  std::vector<PairFalseAlarm> p_fa;      // per (target, nontarget-utterance language)
};

/// Language centroids: the normalized mean of each language's embeddings.
/// Throws EmptyLanguage if a language has no embeddings and ZeroVector if
/// the mean vanishes.
std::vector<Vec> build_language_models(const std::vector<std::vector<Vec>>& embeddings_by_language);

/// Cosine between each trial's test embedding and its target centroid.
ScoreMatrix score_trials(const std::vector<Vec>& models,
                         const std::map<std::string, Vec>& test_embeddings, const TrialSet& trials);

/// Minimum average detection cost over a full threshold sweep.
///
/// A trial is accepted when score >= threshold. Candidate thresholds are every
/// distinct score plus -inf and +inf. At a threshold,
///   Cavg = 1/|T| sum_t [ P_target P_miss(t) + (1 - P_target)/|N_t| sum_{n in N_t} P_fa(t, n) ]
/// where T are the target languages present in the trial set and N_t the
/// utterance languages other than t that were scored against model t. In a
/// closed set |N_t| = C - 1.
CavgReport compute_cavg(const ScoreMatrix& scores, const TrialSet& trials,
                        double target_prior = 0.5);

/// Cavg at a single fixed threshold.
CavgReport compute_cavg_at(const ScoreMatrix& scores, const TrialSet& trials, double threshold,
                           double target_prior = 0.5);

/// Fraction of utterances whose best-scoring language equals the truth; ties
/// resolve to the lowest language index.
double closed_set_accuracy(const ScoreMatrix& scores,
                           const std::map<std::string, std::size_t>& truth);

struct ReportRow {
  std::string system;  // e.g. "x-vector", "MT x-vector"
  MarginSpec spec;
  std::optional<double> mean_p;                 // mean traced p_i, phoneme-aware variants
  std::vector<std::pair<std::string, double>> cavg;  // (condition, Cavg) in column order
};

/// Loss label used in report tables: L_S, L_AS, L_AMS, L_AAMS, L_APMS, L_APAMS.
std::string loss_label(LossVariant v);

/// Columns: No.,System,Loss,m,beta,mean_p,<one Cavg column per condition>.
/// Inapplicable cells hold "-". Condition columns follow the first row.
std::string render_report(const std::vector<ReportRow>& rows);
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path);

// trials.csv: utt_id,target_lang,key with key in {target, nontarget}.
// scores.csv: utt_id,target_lang,score.
void write_trials(const TrialSet& trials, const std::filesystem::path& path);
/// `utterance_language` is looked up through `language_of`; throws
/// UnknownUtterance naming the first id it cannot resolve.
TrialSet read_trials(const std::filesystem::path& path,
                     const std::map<std::string, std::size_t>& language_of);
void write_scores(const ScoreMatrix& scores, const TrialSet& trials,
                  const std::filesystem::path& path);

}  // namespace apm
