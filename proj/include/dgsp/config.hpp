#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "dgsp/model.hpp"

namespace dgsp {

// Full default tree; every recognized key appears here, so validation can
// reject anything it does not know about.
nlohmann::json default_config();

// Defaults overlaid with the JSON file at `path` ("" keeps pure defaults).
// Unknown or type-mismatched keys are rejected.
nlohmann::json load_config(const std::string& path);

// Applies one "dotted.key=value" override. The value is parsed as JSON when
// possible and taken as a string otherwise.
void apply_override(nlohmann::json& cfg, const std::string& kv);

// cfg["seed"], falling back to the DGSP_SEED env var, then 0.
std::uint64_t resolve_seed(const nlohmann::json& cfg);

// Typed extraction of the model.* subtree (vocab_size stays 0; the caller
// sets it from the active vocabulary).
ModelConfig model_config_from(const nlohmann::json& cfg);

}  // namespace dgsp
