#pragma once

#include <filesystem>
#include <string_view>

#include <nlohmann/json.hpp>

#include "opcap/training.hpp"

namespace opcap {

/// Contents of configs/default.json, embedded at build time.
const char* default_config_text();
/// Parsed default document; the base every user config is merged onto.
const nlohmann::json& default_config_json();
ExperimentConfig default_config();

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
/// Keys absent from `j` keep the defaults of default_config_json(); unknown keys and type mismatches are ConfigErrors.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value" to a config document. The key must already
/// exist; the value is parsed as JSON and falls back to a plain string.
void apply_override(nlohmann::json& doc, std::string_view assignment);
/// Same, checked against an arbitrary schema document instead of the experiment defaults.
void apply_override(nlohmann::json& doc, std::string_view assignment, const nlohmann::json& schema);

}  // namespace opcap
