#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "apm/data.hpp"
#include "apm/serialization.hpp"

namespace apm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "segment files are written in host order, which must be little-endian");

constexpr char kMagic[8] = {'A', 'P', 'M', 'S', 'E', 'G', '0', '1'};

using nlohmann::json;

json mat_json(const Mat& m) { return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}}; }

Mat mat_from_json(const json& j) {
  return Mat(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
             j.at("data").get<std::vector<double>>());
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::SchemaMismatch, "truncated segment file " + path.string());
  return v;
}

void write_segment(const Segment& seg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, seg.frames.rows());
  put<std::uint64_t>(out, seg.frames.cols());
  out.write(reinterpret_cast<const char*>(seg.frames.data().data()),
            static_cast<std::streamsize>(seg.frames.data().size() * sizeof(double)));
  for (std::size_t p : seg.phonemes) put<std::uint32_t>(out, static_cast<std::uint32_t>(p));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

void read_segment(Segment& seg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::SchemaMismatch, "bad segment magic in " + path.string());
  }
  const auto rows = get<std::uint64_t>(in, path);
  const auto cols = get<std::uint64_t>(in, path);
  std::vector<double> data(rows * cols);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw Error(ErrorCode::SchemaMismatch, "truncated segment file " + path.string());
  seg.frames = Mat(rows, cols, std::move(data));
  seg.phonemes.resize(rows);
  for (auto& p : seg.phonemes) p = get<std::uint32_t>(in, path);
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "segments", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  json segments = json::array();
  for (const auto& seg : corpus.segments) {
    const std::string file = "segments/" + seg.id + ".seg";
    write_segment(seg, dir / file);
    segments.push_back({{"id", seg.id},
                        {"file", file},
                        {"language", seg.language},
                        {"split", std::string(to_string(seg.split))},
                        {"condition", seg.condition},
                        {"frames", seg.length()}});
  }
  json meta{{"format", "apm-corpus"},
            {"version", kCorpusVersion},
            {"config", corpus.config},
            {"language_tables", mat_json(corpus.language_tables)},
            {"phoneme_means", mat_json(corpus.phoneme_means)},
            {"phoneme_stddevs", mat_json(corpus.phoneme_stddevs)},
            {"segments", std::move(segments)}};
  std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "meta.json").string());
  out << meta.dump(1) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + meta_path.string());
  try {
    const json meta = json::parse(in);
    if (meta.value("format", "") != "apm-corpus") {
      throw Error(ErrorCode::SchemaMismatch, meta_path.string() + " is not an apm corpus");
    }
    if (meta.value("version", 0) != kCorpusVersion) {
      throw Error(ErrorCode::SchemaMismatch, "unsupported corpus version in " + meta_path.string());
    }
    Corpus corpus;
    corpus.config = meta.at("config").get<CorpusConfig>();
    corpus.language_tables = mat_from_json(meta.at("language_tables"));
    corpus.phoneme_means = mat_from_json(meta.at("phoneme_means"));
    corpus.phoneme_stddevs = mat_from_json(meta.at("phoneme_stddevs"));
    for (const auto& js : meta.at("segments")) {
      Segment seg;
      seg.id = js.at("id").get<std::string>();
      seg.language = js.at("language").get<std::size_t>();
      seg.split = parse_split(js.at("split").get<std::string>());
      seg.condition = js.at("condition").get<std::string>();
      read_segment(seg, dir / js.at("file").get<std::string>());
      if (seg.length() != js.at("frames").get<std::size_t>()) {
        throw Error(ErrorCode::SchemaMismatch, "frame count mismatch for " + seg.id);
      }
      corpus.segments.push_back(std::move(seg));
    }
    return corpus;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, meta_path.string() + ": " + e.what());
  }
}

}  // namespace apm
