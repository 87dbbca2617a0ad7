#pragma once

#include <nlohmann/json.hpp>

#include "apm/data.hpp"
#include "apm/losses.hpp"
#include "apm/model.hpp"
#include "apm/training.hpp"

// JSON forms of the configuration types. Readers start from the defaults,
// accept partial objects and reject unknown keys (ConfigInvalid).
namespace apm {

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

void to_json(nlohmann::json& j, const MarginSpec& c);
void from_json(const nlohmann::json& j, MarginSpec& c);

void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace apm
