#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mdgait/model.hpp"
#include "mdgait/train.hpp"

namespace mdgait::app {

// Everything a training or evaluation run depends on. num_classes == 0 means
// "take it from the dataset".
struct RunConfig {
  model::ModelConfig model{.vit = {}, .num_classes = 0};
  train::TrainConfig train;
  std::size_t eval_batch = 64;
};

const std::vector<std::string>& config_keys();

// Throws ConfigError for unknown keys or unparsable values.
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_value(const RunConfig& cfg, std::string_view key);

// Flat "key = value" lines; '#' starts a comment; blank lines ignored.
void apply_text(RunConfig& cfg, std::string_view text);
void apply_file(RunConfig& cfg, const std::filesystem::path& path);

// Canonical "key=value" lines in config_keys() order.
std::string dump(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace mdgait::app
