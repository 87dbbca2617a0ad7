#include <fstream>

#include <nlohmann/json.hpp>

#include "apm/model.hpp"

namespace apm {

namespace {

using nlohmann::json;

json tensor_json(const Mat& m) {
  return json{{"shape", {m.rows(), m.cols()}}, {"data", m.data()}};
}

json tensor_json(const Vec& v) { return json{{"shape", {v.size()}}, {"data", v}}; }

void read_tensor(const json& j, const std::string& name, std::span<double> dst) {
  if (!j.contains(name)) throw Error(ErrorCode::SchemaMismatch, "checkpoint lacks tensor " + name);
  const auto& data = j.at(name).at("data");
  if (data.size() != dst.size()) {
    throw Error(ErrorCode::SchemaMismatch, "tensor " + name + " has " +
                                               std::to_string(data.size()) + " values, expected " +
                                               std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = data[i].get<double>();
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const auto& c = params.config;
  json j;
  j["format"] = "apm-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = {
      {"input_dim", c.encoder.input_dim},
      {"layer_dims", c.encoder.layer_dims},
      {"dilations", c.encoder.dilations},
      {"embedding_dim", c.encoder.embedding_dim},
      {"num_phonemes", c.num_phonemes},
      {"num_languages", c.num_languages},
      {"normalize_embedding", c.normalize_embedding},
  };
  json tensors = json::object();
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    tensors["encoder." + std::to_string(l) + ".weight"] = tensor_json(params.encoder[l].weight);
    tensors["encoder." + std::to_string(l) + ".bias"] = tensor_json(params.encoder[l].bias);
  }
  tensors["phoneme_head.weight"] = tensor_json(params.phoneme_head.weight);
  tensors["phoneme_head.bias"] = tensor_json(params.phoneme_head.bias);
  tensors["embedding.weight"] = tensor_json(params.embedding.weight);
  tensors["embedding.bias"] = tensor_json(params.embedding.bias);
  tensors["language.weight"] = tensor_json(params.language.weight);
  tensors["language.bias"] = tensor_json(params.language.bias);
  j["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, "checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "apm-checkpoint") {
      throw Error(ErrorCode::SchemaMismatch, "not an apm checkpoint: " + path.string());
    }
    if (j.value("version", 0) != kCheckpointVersion) {
      throw Error(ErrorCode::SchemaMismatch, "unsupported checkpoint version");
    }
    const auto& jc = j.at("config");
    ModelConfig c;
    c.encoder.input_dim = jc.at("input_dim").get<std::size_t>();
    c.encoder.layer_dims = jc.at("layer_dims").get<std::vector<std::size_t>>();
    c.encoder.dilations = jc.at("dilations").get<std::vector<std::size_t>>();
    c.encoder.embedding_dim = jc.at("embedding_dim").get<std::size_t>();
    c.num_phonemes = jc.at("num_phonemes").get<std::size_t>();
    c.num_languages = jc.at("num_languages").get<std::size_t>();
    c.normalize_embedding = jc.at("normalize_embedding").get<bool>();

    // Shapes come from the config; payload is copied over.
    ModelParams p = init_params(c, 0, LossVariant::S);
    const auto names = p.tensor_names();
    auto views = p.tensors();
    const auto& jt = j.at("tensors");
    for (std::size_t i = 0; i < names.size(); ++i) read_tensor(jt, names[i], views[i]);
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, "checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace apm
