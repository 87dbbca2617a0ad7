#include "manifest.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "apm/errors.hpp"

namespace apm::cli {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"run_id", m.run_id},
                     {"command", m.command},
                     {"config", m.config},
                     {"corpus_hash", m.corpus_hash},
                     {"outputs", m.outputs},
                     {"wall_clock_seconds", m.wall_clock_seconds},
                     {"seed", m.seed}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("run_id").get_to(m.run_id);
  j.at("command").get_to(m.command);
  m.config = j.at("config");
  j.at("corpus_hash").get_to(m.corpus_hash);
  j.at("outputs").get_to(m.outputs);
  j.at("wall_clock_seconds").get_to(m.wall_clock_seconds);
  j.at("seed").get_to(m.seed);
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << contents;
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename to " + path.string() + ": " + ec.message());
}

void write_manifest(const RunManifest& m, const fs::path& dir) {
  write_file_atomic(dir / kManifestFile, nlohmann::json(m).dump(2) + "\n");
}

std::optional<RunManifest> read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in).get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, (dir / kManifestFile).string() + ": " + e.what());
  }
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_directory(const fs::path& dir, const std::set<std::string>& exclude) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && !exclude.count(e.path().filename().string())) {
      files.push_back(fs::relative(e.path(), dir));
    }
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a({});
  for (const auto& rel : files) {
    const std::string name = rel.generic_string();
    h = fnv1a(name, h);
    h = fnv1a(std::string_view("\0", 1), h);
    std::ifstream in(dir / rel, std::ios::binary);
    const std::string bytes{std::istreambuf_iterator<char>(in), {}};
    h = fnv1a(bytes, h);
  }
  return "fnv1a64:" + hex64(h);
}

}  // namespace apm::cli
