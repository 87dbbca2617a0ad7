#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apm/errors.hpp"

namespace apm::cli {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitUsage = 2,
  kExitDivergence = 3,
  kExitSchema = 4,
};

int exit_code_for(ErrorCode code) noexcept;

/// Explicit flag first, then the MSL_SEED environment variable, then the
/// config value. Throws ConfigInvalid for an unparsable MSL_SEED.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed);

struct GenDataArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::string> label;
  std::optional<std::string> loss;
  std::optional<double> m;
  std::optional<double> beta;
  std::optional<double> s;
  std::optional<double> alpha;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::size_t> chunk;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool phoneme_grad_flow = false;
  bool quiet = false;
};

struct EvalArgs {
  std::filesystem::path model;
  std::filesystem::path data;
  std::filesystem::path trials;
  std::filesystem::path out;
};

struct GradcheckArgs {
  std::string loss = "apms";
  std::size_t cases = 100;
  double tol = 1e-4;
  std::optional<std::uint64_t> seed;
  bool full_model = false;
  std::filesystem::path dump = "gradcheck_failure.json";
  std::optional<std::filesystem::path> replay;
};

struct ReportArgs {
  std::vector<std::filesystem::path> runs;
  std::filesystem::path out = "report.csv";
};

struct ExperimentArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

// Each command reports progress on `out`, diagnostics on `err`, and returns
// an exit code; library errors are translated, not rethrown.
int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err);
int cmd_experiment(const ExperimentArgs& args, std::ostream& out, std::ostream& err);

/// Full command line, including the program name in argv[0].
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace apm::cli
