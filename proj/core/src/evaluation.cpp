#include "apm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "apm/csv.hpp"

namespace apm {

namespace {

struct TrialIndex {
  std::vector<std::size_t> targets;                      // sorted model languages
  std::map<std::size_t, std::size_t> target_count;       // L_t -> #target trials
  std::map<std::size_t, std::map<std::size_t, std::size_t>> nontarget_count;  // L_t -> L_n -> #
};

TrialIndex index_trials(const TrialSet& trials) {
  if (trials.trials.empty()) throw Error(ErrorCode::NoTrials, "trial set is empty");
  TrialIndex idx;
  std::set<std::size_t> targets;
  for (const auto& tr : trials.trials) {
    targets.insert(tr.target);
    if (tr.is_target) {
      ++idx.target_count[tr.target];
    } else {
      ++idx.nontarget_count[tr.target][tr.utterance_language];
    }
  }
  idx.targets.assign(targets.begin(), targets.end());
  for (std::size_t t : idx.targets) {
    if (idx.target_count[t] == 0 || idx.nontarget_count[t].empty()) {
      throw Error(ErrorCode::NoTrials, "language " + std::to_string(t) +
                                           " needs at least one target and one nontarget trial");
    }
  }
  return idx;
}

// Counts of errors at one operating point.
struct ErrorCounts {
  std::map<std::size_t, std::size_t> misses;
  std::map<std::size_t, std::map<std::size_t, std::size_t>> false_alarms;
};

CavgReport cost_from_counts(const TrialIndex& idx, const ErrorCounts& counts, double prior,
                            double threshold) {
  CavgReport rep;
  rep.threshold = threshold;
  double total = 0.0;
  for (std::size_t t : idx.targets) {
    const auto miss_it = counts.misses.find(t);
    const double misses = miss_it == counts.misses.end() ? 0.0 : double(miss_it->second);
    const double p_miss = misses / double(idx.target_count.at(t));
    rep.p_miss[t] = p_miss;
    const auto& nontargets = idx.nontarget_count.at(t);
    const auto fa_it = counts.false_alarms.find(t);
    double fa_sum = 0.0;
    for (const auto& [n, trials_n] : nontargets) {
      double fa = 0.0;
      if (fa_it != counts.false_alarms.end()) {
        const auto f = fa_it->second.find(n);
        if (f != fa_it->second.end()) fa = double(f->second);
      }
      const double rate = fa / double(trials_n);
      rep.p_fa.push_back({t, n, rate});
      fa_sum += rate;
    }
    total += prior * p_miss + (1.0 - prior) / double(nontargets.size()) * fa_sum;
  }
  rep.cavg = total / double(idx.targets.size());
  return rep;
}

}  // namespace

TrialSet make_trials(std::span<const Segment* const> segments, std::size_t num_languages) {
  TrialSet set;
  for (const Segment* seg : segments) {
    for (std::size_t l = 0; l < num_languages; ++l) {
      set.trials.push_back({seg->id, l, seg->language == l, seg->language});
    }
  }
  return set;
}

void ScoreMatrix::set(const std::string& utterance, std::size_t language, double score) {
  if (language >= num_languages_) {
    throw Error(ErrorCode::UnknownLanguage, "language " + std::to_string(language));
  }
  auto& row = rows_[utterance];
  if (row.empty()) row.assign(num_languages_, std::numeric_limits<double>::quiet_NaN());
  row[language] = score;
}

void ScoreMatrix::set_row(const std::string& utterance, Vec scores) {
  if (scores.size() != num_languages_) {
    throw Error(ErrorCode::DimensionMismatch, "score row for " + utterance + " has " +
                                                  std::to_string(scores.size()) + " entries");
  }
  rows_[utterance] = std::move(scores);
}

double ScoreMatrix::at(const std::string& utterance, std::size_t language) const {
  const auto it = rows_.find(utterance);
  if (it == rows_.end()) throw Error(ErrorCode::UnknownUtterance, "no scores for " + utterance);
  if (language >= num_languages_) {
    throw Error(ErrorCode::UnknownLanguage, "language " + std::to_string(language));
  }
  return it->second[language];
}

std::vector<Vec> build_language_models(const std::vector<std::vector<Vec>>& embeddings_by_language) {
  std::vector<Vec> models;
  for (std::size_t l = 0; l < embeddings_by_language.size(); ++l) {
    const auto& embs = embeddings_by_language[l];
    if (embs.empty()) {
      throw Error(ErrorCode::EmptyLanguage, "language " + std::to_string(l) + " has no embeddings");
    }
    // Normalize each embedding first so the centroid is a mean direction and
    // sorted accumulation makes it independent of input order.
    std::vector<Vec> units;
    units.reserve(embs.size());
    for (const auto& e : embs) units.push_back(l2_normalize(e));
    std::sort(units.begin(), units.end());
    Vec mean(units.front().size(), 0.0);
    for (const auto& u : units) {
      if (u.size() != mean.size()) throw Error(ErrorCode::DimensionMismatch, "embedding dims differ");
      for (std::size_t k = 0; k < u.size(); ++k) mean[k] += u[k];
    }
    models.push_back(l2_normalize(mean));
  }
  return models;
}

ScoreMatrix score_trials(const std::vector<Vec>& models,
                         const std::map<std::string, Vec>& test_embeddings, const TrialSet& trials) {
  ScoreMatrix scores(models.size());
  std::map<std::string, Vec> units;
  for (const auto& tr : trials.trials) {
    if (tr.target >= models.size()) {
      throw Error(ErrorCode::UnknownLanguage, "no model for language " + std::to_string(tr.target));
    }
    auto u = units.find(tr.utterance);
    if (u == units.end()) {
      const auto e = test_embeddings.find(tr.utterance);
      if (e == test_embeddings.end()) {
        throw Error(ErrorCode::UnknownUtterance, "no embedding for " + tr.utterance);
      }
      u = units.emplace(tr.utterance, l2_normalize(e->second)).first;
    }
    scores.set(tr.utterance, tr.target, std::clamp(dot(u->second, models[tr.target]), -1.0, 1.0));
  }
  return scores;
}

CavgReport compute_cavg_at(const ScoreMatrix& scores, const TrialSet& trials, double threshold,
                           double target_prior) {
  const TrialIndex idx = index_trials(trials);
  ErrorCounts counts;
  for (const auto& tr : trials.trials) {
    const double s = scores.at(tr.utterance, tr.target);
    if (tr.is_target && s < threshold) ++counts.misses[tr.target];
    if (!tr.is_target && s >= threshold) ++counts.false_alarms[tr.target][tr.utterance_language];
  }
  return cost_from_counts(idx, counts, target_prior, threshold);
}

CavgReport compute_cavg(const ScoreMatrix& scores, const TrialSet& trials, double target_prior) {
  const TrialIndex idx = index_trials(trials);
  struct Scored {
    double score;
    const Trial* trial;
  };
  std::vector<Scored> scored;
  scored.reserve(trials.trials.size());
  for (const auto& tr : trials.trials) scored.push_back({scores.at(tr.utterance, tr.target), &tr});
  std::sort(scored.begin(), scored.end(),
            [](const Scored& a, const Scored& b) { return a.score < b.score; });

  // Start at -inf: every trial accepted.
  ErrorCounts counts;
  for (const auto& s : scored) {
    if (!s.trial->is_target) ++counts.false_alarms[s.trial->target][s.trial->utterance_language];
  }
  const double inf = std::numeric_limits<double>::infinity();
  CavgReport best = cost_from_counts(idx, counts, target_prior, -inf);

  // Raising the threshold to the next distinct score rejects the trials
  // tied at the previous one.
  std::size_t i = 0;
  while (i < scored.size()) {
    const double threshold = scored[i].score;
    CavgReport rep = cost_from_counts(idx, counts, target_prior, threshold);
    if (rep.cavg < best.cavg) best = std::move(rep);
    std::size_t j = i;
    while (j < scored.size() && scored[j].score == threshold) {
      const Trial& tr = *scored[j].trial;
      if (tr.is_target) {
        ++counts.misses[tr.target];
      } else {
        --counts.false_alarms[tr.target][tr.utterance_language];
      }
      ++j;
    }
    i = j;
  }
  CavgReport rep = cost_from_counts(idx, counts, target_prior, inf);
  if (rep.cavg < best.cavg) best = std::move(rep);
  return best;
}

double closed_set_accuracy(const ScoreMatrix& scores,
                           const std::map<std::string, std::size_t>& truth) {
  if (truth.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& [utt, lang] : truth) {
    const auto it = scores.rows().find(utt);
    if (it == scores.rows().end()) throw Error(ErrorCode::UnknownUtterance, "no scores for " + utt);
    const Vec& row = it->second;
    // max_element returns the first maximum, i.e. the lowest index on ties.
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == lang) ++correct;
  }
  return double(correct) / double(truth.size());
}

std::string loss_label(LossVariant v) { return "L_" + std::string(to_string(v)); }

std::string render_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "No.,System,Loss,m,beta,mean_p";
  std::vector<std::string> conditions;
  if (!rows.empty()) {
    for (const auto& [cond, value] : rows.front().cavg) conditions.push_back(cond);
  }
  for (const auto& c : conditions) out << ',' << c;
  out << '\n';
  std::size_t no = 1;
  for (const auto& row : rows) {
    const auto v = row.spec.variant;
    const bool has_m = v != LossVariant::S;
    const bool aware = is_phoneme_aware(v);
    out << no++ << ',' << row.system << ',' << loss_label(v) << ','
        << (has_m ? (v == LossVariant::AS ? std::to_string(row.spec.as_margin)
                                          : format_double(row.spec.m))
                  : "-")
        << ',' << (aware ? format_double(row.spec.beta) : "-") << ','
        << (aware && row.mean_p ? format_double(*row.mean_p) : "-");
    for (const auto& c : conditions) {
      const auto it = std::find_if(row.cavg.begin(), row.cavg.end(),
                                   [&](const auto& p) { return p.first == c; });
      out << ',' << (it == row.cavg.end() ? "-" : format_double(it->second));
    }
    out << '\n';
  }
  return out.str();
}

void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  write_text_file(path, render_report(rows));
}

void write_trials(const TrialSet& trials, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "utt_id,target_lang,key\n";
  for (const auto& tr : trials.trials) {
    out << tr.utterance << ',' << tr.target << ',' << (tr.is_target ? "target" : "nontarget")
        << '\n';
  }
  write_text_file(path, out.str());
}

TrialSet read_trials(const std::filesystem::path& path,
                     const std::map<std::string, std::size_t>& language_of) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows.front() != CsvRow{"utt_id", "target_lang", "key"}) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": expected header utt_id,target_lang,key");
  }
  TrialSet set;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 3) {
      throw Error(ErrorCode::SchemaMismatch, path.string() + ": line " + std::to_string(i + 1) +
                                                 " does not have 3 fields");
    }
    const auto lang = language_of.find(r[0]);
    if (lang == language_of.end()) throw Error(ErrorCode::UnknownUtterance, r[0]);
    Trial tr;
    tr.utterance = r[0];
    try {
      tr.target = parse_index(r[1]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaMismatch, "bad target_lang '" + r[1] + "'");
    }
    if (r[2] != "target" && r[2] != "nontarget") {
      throw Error(ErrorCode::SchemaMismatch, "bad key '" + r[2] + "'");
    }
    tr.is_target = r[2] == "target";
    tr.utterance_language = lang->second;
    if (tr.is_target != (tr.utterance_language == tr.target)) {
      throw Error(ErrorCode::SchemaMismatch, "key for " + tr.utterance + " against " + r[1] +
                                                 " disagrees with its language");
    }
    set.trials.push_back(std::move(tr));
  }
  return set;
}

void write_scores(const ScoreMatrix& scores, const TrialSet& trials,
                  const std::filesystem::path& path) {
  std::ostringstream out;
  out << "utt_id,target_lang,score\n";
  for (const auto& tr : trials.trials) {
    out << tr.utterance << ',' << tr.target << ',' << format_double(scores.at(tr.utterance, tr.target))
        << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace apm
