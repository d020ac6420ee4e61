#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "pfv2/data.hpp"
#include "pfv2/model.hpp"
#include "pfv2/train.hpp"

namespace pfv2::cli {

/// Invalid configuration or override; reported with exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Built-in defaults. `seed` comes from PFV2_SEED when set.
nlohmann::json default_config();

/// Recursively overlays `overlay` onto `base`. Keys absent from `base` and
/// type changes are rejected.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");

/// Applies one `section.key=value` override. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

ModelConfig model_config_from_json(const nlohmann::json& model);
Variant variant_from_json(const nlohmann::json& model);
nlohmann::json model_config_to_json(const ModelConfig& config, Variant variant);
TrainSchedule schedule_from_json(const nlohmann::json& config);
MotionOptions motion_from_json(const nlohmann::json& config);

/// Entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace pfv2::cli
