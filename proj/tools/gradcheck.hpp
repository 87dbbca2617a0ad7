#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "apm/losses.hpp"

namespace apm::cli {

struct GradcheckOptions {
  LossVariant variant = LossVariant::APMS;
  std::size_t cases = 100;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  // Check the full multi-task backward on a tiny network instead of the
  // loss function alone.
  bool full_model = false;
};

struct GradcheckResult {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // points too close to a kink
  std::size_t failures = 0;
  double worst_error = 0.0;
  // The worst failing case; replayable through replay_case().
  std::optional<nlohmann::json> failing_case;
  bool passed() const { return failures == 0 && checked > 0; }
};

GradcheckResult run_gradcheck(const GradcheckOptions& options);

/// Re-evaluates one serialized case and returns its relative error.
double replay_case(const nlohmann::json& failing_case);

}  // namespace apm::cli
