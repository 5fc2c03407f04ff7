#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "vfg/data.hpp"
#include "vfg/model.hpp"

namespace vfg {

inline constexpr int kCheckpointVersion = 1;

/// Self-describing model snapshot: the graph spec is embedded, every
/// parameter array carries its shape.
struct Checkpoint {
  Model model;
  std::size_t step = 0;
  std::uint64_t rng_state = 0;
  nlohmann::json config = nlohmann::json::object();  // echo of the run configuration
  std::optional<ColumnStats> standardization;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
/// Throws DataError on a version mismatch, missing fields, or parameter
/// shapes that disagree with the graph (the message names the edge).
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

/// Doubles are written in their shortest round-trip form, so a load
/// reproduces every parameter bit-exactly and save -> load -> save is
/// byte-identical.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text, const std::string& source = "<checkpoint>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j, const std::string& what);

}  // namespace vfg
