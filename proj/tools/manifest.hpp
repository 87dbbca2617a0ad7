#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace apm::cli {

inline constexpr const char* kManifestFile = "manifest.json";

/// Completion record of one command. Written last: a directory without it is
/// an incomplete run.
struct RunManifest {
  std::string run_id;
  std::string command;
  nlohmann::json config;    // fully materialized, including defaults
  std::string corpus_hash;  // FNV-1a over the input corpus files
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

/// Writes through a temporary file and a rename.
void write_manifest(const RunManifest& m, const std::filesystem::path& dir);
std::optional<RunManifest> read_manifest(const std::filesystem::path& dir);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Hash of every regular file below `dir` (relative path and contents, in
/// path order). Files named in `exclude` are skipped at any depth.
std::string hash_directory(const std::filesystem::path& dir,
                           const std::set<std::string>& exclude = {kManifestFile});

/// Replace-by-rename text write, so readers never observe partial files.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace apm::cli
