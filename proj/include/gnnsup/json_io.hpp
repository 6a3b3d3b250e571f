#pragma once

#include "json.hpp"

#include "gnnsup/graphgen.hpp"
#include "gnnsup/model.hpp"

namespace gnnsup {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const PairwiseConfig& c);
void from_json(const nlohmann::json& j, PairwiseConfig& c);
void to_json(nlohmann::json& j, const ConjunctionConfig& c);
void from_json(const nlohmann::json& j, ConjunctionConfig& c);

}  // namespace gnnsup
