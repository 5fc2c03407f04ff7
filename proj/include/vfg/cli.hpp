#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfg/model.hpp"
#include "vfg/train.hpp"

namespace vfg::cli {

/// Everything a subcommand may need. Filled from --config JSON first, then
/// overridden by explicit flags.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  std::optional<std::string> graph;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> label_column;
  bool standardize = false;
  std::vector<std::size_t> observe;  // 1-based section positions
  std::size_t count = 1000;
  std::optional<std::size_t> label;
  std::optional<double> beta;  // evaluation override
  bool force = false;
};

/// Applies a configuration document. Unknown keys and ill-typed values are
/// UsageErrors naming the key.
void apply_config_json(RunConfig& cfg, const nlohmann::json& doc);

nlohmann::json train_config_to_json(const TrainConfig& t);
nlohmann::json model_config_to_json(const ModelConfig& m);

/// "1,3" -> {1, 3}; throws UsageError on anything else.
std::vector<std::size_t> parse_index_list(const std::string& text);

/// Entry point of the `vfg` tool. Returns the process exit code: 0 success,
/// 1 usage error, 2 data or validation error, 3 numeric failure.
int run(int argc, const char* const* argv);

}  // namespace vfg::cli
