#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string_view>
#include <string>

#include <nlohmann/json.hpp>

#include "strider/finetune.hpp"
#include "strider/flow_repr.hpp"
#include "strider/metrics.hpp"
#include "strider/model.hpp"
#include "strider/online.hpp"
#include "strider/train_config.hpp"

namespace strider {

struct OodConfig {
  double tau = 1.0;
  double threshold = -0.5;  // s: in-distribution when score >= s

  friend bool operator==(const OodConfig&, const OodConfig&) = default;
};

/// Everything a run depends on. Serialized as one JSON document; reading
/// rejects unknown keys. Sections may be partial, missing fields keep
/// their current values.
struct RunConfig {
  std::uint64_t seed = 0;
  ReprConfig repr;
  ModelConfig model;
  TrainConfig pretrain{.steps = 2000, .batch = 64, .lr = 1e-3};
  FinetuneConfig finetune;
  OodConfig ood;
  SplitSpec split;
  double few_shot_fraction = 1.0;
  double flush_period_s = 3.0;
  double evict_after_s = 10.0;
  double speed_factor = 1.0;
  std::map<std::string, std::string> paths;

  /// Copies the representation into the model, the seed into the training
  /// sections, and validates.
  void resolve();
  OnlineConfig online() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Overlays `j` onto `cfg`. InvalidConfig on unknown keys or bad types.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// {"command", "seed", "config"} block embedded in every artifact.
nlohmann::json provenance(const RunConfig& cfg, std::string_view command);

/// Checkpoint whose manifest carries the provenance block, the model parts
/// and `extra`.
void save_model(const std::filesystem::path& path, const Model<float>& model, const RunConfig& cfg,
                std::string_view command, const nlohmann::json& extra = nlohmann::json::object());

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<Model<float>> model;
};

/// Rebuilds a model saved by save_model with its own config and weights.
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace strider
