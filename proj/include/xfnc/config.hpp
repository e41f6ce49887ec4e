#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "xfnc/meta.hpp"

namespace xfnc {

// TrainConfig plus the file locations a command needs.
struct RunConfig {
  meta::TrainConfig train;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "out";
};

nlohmann::ordered_json to_json(const meta::TrainConfig& cfg);
nlohmann::ordered_json to_json(const RunConfig& cfg);

// Strict: unknown keys and type mismatches raise ConfigError naming the field.
// Keys absent from `doc` keep their current value in `cfg`.
void apply_json(meta::TrainConfig& cfg, const nlohmann::json& doc);

// `data_dir` is required; everything else defaults.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Range checks shared by every command.
void validate(const meta::TrainConfig& cfg);

nlohmann::ordered_json to_json(const meta::EvalReport& report);

// Shortest round-trip decimal form.
std::string format_double(double v);

std::string episode_csv_header();
std::string episode_csv_row(const meta::EpisodeLog& log);

}  // namespace xfnc
