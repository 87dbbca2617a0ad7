#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "apm/csv.hpp"
#include "apm/data.hpp"
#include "apm/evaluation.hpp"
#include "apm/experiment.hpp"
#include "apm/serialization.hpp"
#include "apm/training.hpp"
#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "manifest.hpp"

namespace apm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kResultsFile = "results.json";

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
}

void save_json(const json& j, const fs::path& path) {
  write_text_file(path, j.dump(2) + "\n");
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
}

void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  // A stale manifest would mark a half-rewritten directory as complete.
  fs::remove(dir / kManifestFile, ec);
}

std::string slug(std::string_view text) {
  std::string out;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '.') {
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

std::string default_label(const TrainConfig& tc) {
  return tc.weights.alpha > 0.0 ? "MT x-vector" : "x-vector";
}

MarginSpec default_spec(LossVariant v, double s) {
  switch (v) {
    case LossVariant::S: return MarginSpec::softmax();
    case LossVariant::AS: return MarginSpec::a_softmax(2);
    case LossVariant::AMS: return MarginSpec::am(0.2, s);
    case LossVariant::AAMS: return MarginSpec::aam(0.2, s);
    case LossVariant::APMS: return MarginSpec::apm(0.2, 10.0, s);
    case LossVariant::APAMS: return MarginSpec::apam(0.2, 10.0, s);
  }
  return {};
}

LossVariant parse_variant_or_throw(const std::string& name) {
  const auto v = parse_loss_variant(name);
  if (!v) throw Error(ErrorCode::ConfigInvalid, "unknown loss variant '" + name + "'");
  return *v;
}

// Model dimensions follow the corpus; an explicit config value must agree.
void fit_model_to_corpus(ModelConfig& mc, const json& model_json, const CorpusConfig& cc) {
  const json enc = model_json.value("encoder", json::object());
  auto check = [](const json& j, const char* key, std::size_t want) {
    if (j.contains(key) && j.at(key).get<std::size_t>() != want) {
      throw Error(ErrorCode::ConfigInvalid, std::string("model ") + key + " " +
                                                j.at(key).dump() + " does not match the corpus (" +
                                                std::to_string(want) + ")");
    }
  };
  check(enc, "input_dim", cc.feature_dim);
  check(model_json, "num_languages", cc.num_languages);
  check(model_json, "num_phonemes", cc.num_phonemes);
  mc.encoder.input_dim = cc.feature_dim;
  mc.num_languages = cc.num_languages;
  mc.num_phonemes = cc.num_phonemes;
}

struct TrainJob {
  ModelConfig model;
  TrainConfig train;
  std::string label;
};

// Reads the {"model", "train", "label"} config file.
TrainJob load_train_job(const std::optional<fs::path>& path, json& model_json) {
  TrainJob job;
  json cfg = path ? load_json(*path) : json::object();
  if (!cfg.is_object()) throw Error(ErrorCode::ConfigInvalid, "train config must be an object");
  for (const auto& [key, value] : cfg.items()) {
    if (key != "model" && key != "train" && key != "label") {
      throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "' in train config");
    }
  }
  model_json = cfg.value("model", json::object());
  from_json(model_json, job.model);
  if (cfg.contains("train")) from_json(cfg.at("train"), job.train);
  if (cfg.contains("label")) job.label = cfg.at("label").get<std::string>();
  return job;
}

// Trains one system into `dir` and writes every artifact, manifest last.
int train_into(const Corpus& corpus, const std::string& corpus_hash, const TrainJob& job,
               const fs::path& dir, bool quiet, std::ostream& out) {
  Stopwatch clock;
  prepare_output_dir(dir);
  const TrainConfig& tc = job.train;
  if (!quiet) {
    out << "training " << job.label << " (" << loss_label(tc.spec.variant) << ", m="
        << format_double(tc.spec.m) << ", beta=" << format_double(tc.spec.beta)
        << ", alpha=" << format_double(tc.weights.alpha) << ") for " << tc.epochs << " epochs\n";
  }
  const TrainResult result = train(corpus, job.model, tc, [&](const EpochMetrics& m) {
    if (quiet) return;
    out << "  epoch " << m.epoch << " loss " << format_double(m.total_loss) << " dev_acc "
        << format_double(m.dev_accuracy) << " dev_cavg " << format_double(m.dev_cavg) << '\n';
  });

  std::vector<std::string> outputs{"checkpoint.json", "metrics.csv"};
  save_checkpoint(result.params, dir / "checkpoint.json");
  write_metrics(result.metrics, dir / "metrics.csv");
  const bool aware = is_phoneme_aware(tc.spec.variant);
  if (aware && !result.trace.empty()) {
    emit_margin_trace(result.trace, dir / "margin_trace.csv");
    outputs.push_back("margin_trace.csv");
  }

  const auto conditions = evaluate_conditions(result.params, corpus);
  json results{{"system", job.label},
               {"spec", tc.spec},
               {"alpha", tc.weights.alpha},
               {"mean_p", aware && !result.trace.empty() ? json(mean_confidence(result.trace))
                                                         : json(nullptr)},
               {"conditions", json::object()}};
  if (!result.metrics.empty()) {
    results["dev"] = {{"accuracy", result.metrics.back().dev_accuracy},
                      {"cavg", result.metrics.back().dev_cavg}};
  }
  for (const auto& [name, cond] : conditions) {
    results["conditions"][name] = {{"cavg", cond.cavg.cavg},
                                   {"threshold", cond.cavg.threshold},
                                   {"accuracy", cond.accuracy}};
    if (!quiet) {
      out << "  " << name << " cavg " << format_double(cond.cavg.cavg) << " accuracy "
          << format_double(cond.accuracy) << '\n';
    }
  }
  save_json(results, dir / kResultsFile);
  outputs.push_back(kResultsFile);

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = {{"model", job.model}, {"train", tc}, {"label", job.label}};
  manifest.run_id = "train-" + hex64(fnv1a(manifest.config.dump() + corpus_hash));
  manifest.corpus_hash = corpus_hash;
  manifest.outputs = outputs;
  manifest.seed = tc.seed;
  manifest.wall_clock_seconds = clock.seconds();
  write_manifest(manifest, dir);
  return kExitOk;
}

std::optional<ReportRow> row_from_run(const fs::path& dir, std::ostream& err) {
  const auto manifest = read_manifest(dir);
  if (!manifest) {
    err << "warning: skipping incomplete run " << dir.string() << " (no manifest)\n";
    return std::nullopt;
  }
  if (manifest->command != "train") return std::nullopt;
  std::ifstream in(dir / kResultsFile);
  if (!in) {
    err << "warning: skipping " << dir.string() << " (no " << kResultsFile << ")\n";
    return std::nullopt;
  }
  const json r = json::parse(in);
  ReportRow row;
  row.system = r.at("system").get<std::string>();
  from_json(r.at("spec"), row.spec);
  if (!r.at("mean_p").is_null()) row.mean_p = r.at("mean_p").get<double>();
  const json& conds = r.at("conditions");
  for (const auto& name : test_conditions()) {
    if (conds.contains(name)) row.cavg.emplace_back(name, conds.at(name).at("cavg").get<double>());
  }
  return row;
}

}  // namespace

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::InvalidSpec:
    case ErrorCode::ChunkTooLong:
      return kExitUsage;
    case ErrorCode::DivergenceDetected:
      return kExitDivergence;
    case ErrorCode::SchemaMismatch:
    case ErrorCode::UnknownUtterance:
    case ErrorCode::UnknownLanguage:
    case ErrorCode::IoError:
    case ErrorCode::NoTrials:
    case ErrorCode::EmptyLanguage:
    case ErrorCode::SegmentTooShort:
      return kExitSchema;
    default:
      return kExitCheckFailed;
  }
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MSL_SEED"); env && *env) {
    try {
      return parse_index(env);
    } catch (const Error&) {
      throw Error(ErrorCode::ConfigInvalid, std::string("MSL_SEED is not an integer: ") + env);
    }
  }
  return config_seed;
}

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Stopwatch clock;
    CorpusConfig cfg;
    if (args.config) from_json(load_json(*args.config), cfg);
    cfg.seed = resolve_seed(args.seed, cfg.seed);
    cfg.validate();
    if (fs::exists(args.out) && !fs::is_empty(args.out)) {
      throw Error(ErrorCode::ConfigInvalid, "output directory " + args.out.string() +
                                                " is not empty");
    }
    const Corpus corpus = generate_corpus(cfg);
    save_corpus(corpus, args.out);

    std::vector<std::string> outputs{"meta.json", "segments/"};
    const TrialSet dev = make_trials(corpus.split(Split::Dev), cfg.num_languages);
    write_trials(dev, args.out / "trials_dev.csv");
    outputs.push_back("trials_dev.csv");
    for (const auto& cond : test_conditions()) {
      const std::string name = "trials_" + cond + ".csv";
      write_trials(make_trials(corpus.split(Split::Test, cond), cfg.num_languages), args.out / name);
      outputs.push_back(name);
    }

    RunManifest manifest;
    manifest.command = "gen-data";
    manifest.config = cfg;
    manifest.corpus_hash = hash_directory(args.out);
    manifest.run_id = "gen-data-" + hex64(fnv1a(manifest.config.dump()));
    manifest.outputs = outputs;
    manifest.seed = cfg.seed;
    manifest.wall_clock_seconds = clock.seconds();
    write_manifest(manifest, args.out);
    out << "wrote " << corpus.segments.size() << " segments (" << cfg.num_languages
        << " target + " << cfg.num_nontarget_languages << " nontarget languages) to "
        << args.out.string() << "\n"
        << "corpus hash " << manifest.corpus_hash << '\n';
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    json model_json;
    TrainJob job = load_train_job(args.config, model_json);
    TrainConfig& tc = job.train;
    if (args.loss) tc.spec = default_spec(parse_variant_or_throw(*args.loss), tc.spec.s);
    if (args.s) tc.spec.s = *args.s;
    if (args.m) {
      if (tc.spec.variant == LossVariant::AS) {
        if (*args.m < 1.0 || *args.m != std::floor(*args.m)) {
          throw Error(ErrorCode::ConfigInvalid, "A-Softmax margin must be a positive integer");
        }
        tc.spec.as_margin = static_cast<int>(*args.m);
      } else {
        tc.spec.m = *args.m;
      }
    }
    if (args.beta) tc.spec.beta = *args.beta;
    if (args.phoneme_grad_flow) tc.spec.phoneme_grad_flow = true;
    if (args.alpha) tc.weights.alpha = *args.alpha;
    if (args.epochs) tc.epochs = *args.epochs;
    if (args.batch) tc.batch_size = *args.batch;
    if (args.lr) tc.adam.learning_rate = *args.lr;
    if (args.chunk) tc.chunk_len = *args.chunk;
    if (args.threads) tc.threads = *args.threads;
    tc.seed = resolve_seed(args.seed, tc.seed);
    if (args.label) job.label = *args.label;
    if (job.label.empty()) job.label = default_label(tc);
    tc.validate();
    tc.spec.validate();

    const Corpus corpus = load_corpus(args.data);
    fit_model_to_corpus(job.model, model_json, corpus.config);
    job.model.validate();
    return train_into(corpus, hash_directory(args.data), job, args.out, args.quiet, out);
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Stopwatch clock;
    const ModelParams params = load_checkpoint(args.model);
    const Corpus corpus = load_corpus(args.data);
    if (params.config.encoder.input_dim != corpus.config.feature_dim ||
        params.config.num_languages != corpus.config.num_languages) {
      throw Error(ErrorCode::SchemaMismatch, "checkpoint does not match the corpus dimensions");
    }
    std::map<std::string, std::size_t> language_of;
    std::map<std::string, const Segment*> by_id;
    for (const auto& seg : corpus.segments) {
      language_of.emplace(seg.id, seg.language);
      by_id.emplace(seg.id, &seg);
    }
    const TrialSet trials = read_trials(args.trials, language_of);
    for (const auto& tr : trials.trials) {
      if (tr.target >= params.config.num_languages) {
        throw Error(ErrorCode::UnknownLanguage, "trial target language " +
                                                    std::to_string(tr.target) + " for " +
                                                    tr.utterance);
      }
    }

    const auto models = train_language_models(params, corpus);
    std::map<std::string, Vec> embeddings;
    std::map<std::string, std::size_t> truth;
    for (const auto& tr : trials.trials) {
      if (embeddings.count(tr.utterance)) continue;
      const Segment* seg = by_id.at(tr.utterance);
      embeddings.emplace(tr.utterance, extract_embedding(params, *seg));
      if (seg->language < params.config.num_languages) truth.emplace(seg->id, seg->language);
    }
    const ScoreMatrix scores = score_trials(models, embeddings, trials);
    const CavgReport rep = compute_cavg(scores, trials);

    prepare_output_dir(args.out);
    write_scores(scores, trials, args.out / "scores.csv");
    json report{{"cavg", rep.cavg},
                {"threshold", rep.threshold},
                {"trials", trials.trials.size()},
                {"p_miss", json::object()},
                {"p_fa", json::array()}};
    for (const auto& [lang, pm] : rep.p_miss) report["p_miss"][std::to_string(lang)] = pm;
    for (const auto& fa : rep.p_fa) {
      report["p_fa"].push_back({{"target", fa.target}, {"nontarget", fa.nontarget}, {"rate", fa.rate}});
    }
    // Accuracy only covers utterances whose every model was scored.
    std::map<std::string, std::size_t> complete;
    for (const auto& [utt, lang] : truth) {
      const Vec& row = scores.rows().at(utt);
      if (std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
        complete.emplace(utt, lang);
      }
    }
    report["accuracy"] = complete.empty() ? json(nullptr) : json(closed_set_accuracy(scores, complete));
    save_json(report, args.out / "cavg.json");

    RunManifest manifest;
    manifest.command = "eval";
    manifest.config = {{"model", args.model.string()},
                       {"data", args.data.string()},
                       {"trials", args.trials.string()}};
    manifest.corpus_hash = hash_directory(args.data);
    manifest.run_id = "eval-" + hex64(fnv1a(manifest.config.dump() + manifest.corpus_hash));
    manifest.outputs = {"scores.csv", "cavg.json"};
    manifest.wall_clock_seconds = clock.seconds();
    write_manifest(manifest, args.out);
    out << "cavg " << format_double(rep.cavg) << " at threshold " << format_double(rep.threshold)
        << " over " << trials.trials.size() << " trials\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.replay) {
      const json rec = load_json(*args.replay);
      const double e = replay_case(rec);
      const double tol = rec.value("tolerance", args.tol);
      out << "replayed " << rec.at("variant").get<std::string>() << " case: relative error "
          << format_double(e) << " (tolerance " << format_double(tol) << ")\n";
      return e < tol ? kExitOk : kExitCheckFailed;
    }
    GradcheckOptions opt;
    opt.variant = parse_variant_or_throw(args.loss);
    if (args.cases < 1) throw Error(ErrorCode::ConfigInvalid, "--cases must be >= 1");
    if (!(args.tol > 0.0)) throw Error(ErrorCode::ConfigInvalid, "--tol must be > 0");
    opt.cases = args.cases;
    opt.tolerance = args.tol;
    opt.seed = resolve_seed(args.seed, 1);
    opt.full_model = args.full_model;

    const GradcheckResult r = run_gradcheck(opt);
    out << (opt.full_model ? "backward/" : "") << to_string(opt.variant) << ": " << r.checked
        << " cases checked, " << r.skipped << " skipped near kinks, " << r.failures
        << " failed; worst relative error " << format_double(r.worst_error) << " (tolerance "
        << format_double(opt.tolerance) << ")\n";
    if (r.passed()) return kExitOk;
    if (r.failing_case) {
      write_text_file(args.dump, r.failing_case->dump(2) + "\n");
      err << "worst failing case written to " << args.dump.string() << " (replay with --replay)\n";
    }
    return kExitCheckFailed;
  });
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::vector<fs::path> candidates;
    for (const auto& p : args.runs) {
      if (!fs::is_directory(p)) {
        err << "warning: " << p.string() << " is not a directory\n";
        continue;
      }
      if (fs::exists(p / kManifestFile) || fs::exists(p / kResultsFile)) {
        candidates.push_back(p);
        continue;
      }
      std::vector<fs::path> children;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_directory()) children.push_back(e.path());
      }
      std::sort(children.begin(), children.end());
      candidates.insert(candidates.end(), children.begin(), children.end());
    }
    std::vector<ReportRow> rows;
    for (const auto& dir : candidates) {
      if (auto row = row_from_run(dir, err)) rows.push_back(std::move(*row));
    }
    if (rows.empty()) {
      err << "error: no completed runs found\n";
      return kExitCheckFailed;
    }
    write_report(rows, args.out);
    out << render_report(rows);
    return kExitOk;
  });
}

int cmd_experiment(const ExperimentArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    json model_json;
    TrainJob base = load_train_job(args.config, model_json);
    if (args.epochs) base.train.epochs = *args.epochs;
    if (args.threads) base.train.threads = *args.threads;
    base.train.seed = resolve_seed(args.seed, base.train.seed);
    const Corpus corpus = load_corpus(args.data);
    fit_model_to_corpus(base.model, model_json, corpus.config);
    base.model.validate();
    const std::string hash = hash_directory(args.data);

    const auto systems = comparison_systems(base.train);
    for (std::size_t i = 0; i < systems.size(); ++i) {
      const auto& sys = systems[i];
      TrainJob job{base.model, sys.train, sys.label};
      std::string name = (i < 9 ? "0" : "") + std::to_string(i + 1) + "_" + slug(sys.label) +
                         "_" + slug(to_string(sys.train.spec.variant));
      if (sys.train.spec.variant != LossVariant::S) name += "_m" + format_double(sys.train.spec.m);
      const int rc = train_into(corpus, hash, job, args.out / name, false, out);
      if (rc != kExitOk) return rc;
    }
    ReportArgs rep;
    rep.runs = {args.out};
    rep.out = args.out / "report.csv";
    return cmd_report(rep, out, err);
  });
}

namespace {

template <class T>
CLI::Option* add_optional(CLI::App& app, const std::string& name, std::optional<T>& dst,
                          const std::string& help) {
  return app.add_option_function<T>(name, [&dst](const T& v) { dst = v; }, help);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Phoneme-aware margin softmax language identification toolkit", "apm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "apm 0.1.0");

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic multilingual corpus");
  add_optional(*g, "--config", gen.config, "Corpus config JSON")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory (new or empty)")->required();
  add_optional(*g, "--seed", gen.seed, "Seed (overrides MSL_SEED and the config)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one system and evaluate every test condition");
  add_optional(*t, "--config", tr.config, "Train config JSON {model, train, label}")
      ->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Run directory")->required();
  add_optional(*t, "--label", tr.label, "System label in reports");
  add_optional(*t, "--loss", tr.loss, "s | as | ams | aams | apms | apams");
  add_optional(*t, "--m", tr.m, "Base margin (integer multiplier for as)");
  add_optional(*t, "--beta", tr.beta, "Phoneme margin weight");
  add_optional(*t, "--s", tr.s, "Cosine scale");
  add_optional(*t, "--alpha", tr.alpha, "Phoneme task weight");
  add_optional(*t, "--epochs", tr.epochs, "Epochs");
  add_optional(*t, "--batch", tr.batch, "Batch size");
  add_optional(*t, "--lr", tr.lr, "Adam learning rate");
  add_optional(*t, "--chunk", tr.chunk, "Training chunk length in frames");
  add_optional(*t, "--seed", tr.seed, "Seed (overrides MSL_SEED and the config)");
  add_optional(*t, "--threads", tr.threads, "Worker threads");
  t->add_flag("--phoneme-grad-flow", tr.phoneme_grad_flow,
              "Let gradients flow through the phoneme margin");
  t->add_flag("--quiet", tr.quiet, "Suppress per-epoch output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a trial list and compute Cavg");
  e->add_option("--model", ev.model, "checkpoint.json")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--trials", ev.trials, "trials.csv")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Output directory")->required();

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  c->add_option("--loss", gc.loss, "Loss variant")->capture_default_str();
  c->add_option("--cases", gc.cases, "Random cases")->capture_default_str();
  c->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
  add_optional(*c, "--seed", gc.seed, "Seed");
  c->add_flag("--full", gc.full_model, "Check the full model backward on a tiny network");
  c->add_option("--dump", gc.dump, "Where to write the worst failing case")->capture_default_str();
  add_optional(*c, "--replay", gc.replay, "Re-run a dumped case")->check(CLI::ExistingFile);

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Collect finished runs into one table");
  r->add_option("runs", rp.runs, "Run directories or parents of run directories")->required();
  r->add_option("--out", rp.out, "CSV path")->capture_default_str();

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "Train the full comparison matrix and report it");
  add_optional(*x, "--config", ex.config, "Train config JSON")->check(CLI::ExistingFile);
  x->add_option("--data", ex.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  x->add_option("--out", ex.out, "Parent directory for the runs")->required();
  add_optional(*x, "--epochs", ex.epochs, "Epochs per system");
  add_optional(*x, "--seed", ex.seed, "Seed");
  add_optional(*x, "--threads", ex.threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    const int rc = app.exit(pe, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (g->parsed()) return cmd_gen_data(gen, out, err);
  if (t->parsed()) return cmd_train(tr, out, err);
  if (e->parsed()) return cmd_eval(ev, out, err);
  if (c->parsed()) return cmd_gradcheck(gc, out, err);
  if (r->parsed()) return cmd_report(rp, out, err);
  if (x->parsed()) return cmd_experiment(ex, out, err);
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"apm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace apm::cli
