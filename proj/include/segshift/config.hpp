#pragma once

// Experiment configuration: one validated record per stage, JSON
// (de)serialization, named presets and the single-field ablation deltas.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "segshift/data.hpp"
#include "segshift/losses.hpp"
#include "segshift/nets.hpp"

namespace segshift {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainConfig {
  NetConfig net;
  int batch_size = 32;
  int delta = 4;  // shift range; round(0.125 * resolution) by default
  LossWeights weights;
  OptimizerConfig optimizer;
  std::int64_t total_real_images = 200000;
  std::optional<std::pair<double, double>> contrast_jitter;
  bool random_crop = true;
  int d_steps_per_g_step = 1;
  std::int64_t checkpoint_every = 500;  // steps; the final step is always checkpointed
  std::int64_t log_every = 1;
  std::uint64_t seed = 1;

  /// Throws ConfigError. Requires delta < resolution / 2 and batch_size >= 2.
  void validate() const;
  std::int64_t total_steps() const;
  int resolution() const { return net.resolution; }

  bool operator==(const TrainConfig&) const = default;
};

struct EncoderTrainConfig {
  int chunk_size = 100;
  int iterations = 1000;
  int batch_size = 0;  // images per iteration; 0 means the whole chunk
  OptimizerConfig optimizer{1e-4, 0.9, 0.999};
  int code_count = 2;
  double l1_weight = 1.0;
  double perceptual_weight = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const EncoderTrainConfig&) const = default;
};

struct EvalConfig {
  int eval_images = 500;  // first N dataset images are segmented and scored
  double threshold = 0.5;
  int mask_samples = 1000;
  int montage_rows = 4;
  int montage_cols = 8;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "default";
  std::uint64_t seed = 1;  // master seed; see fan_out_seeds()
  SynthParams synth;
  int dataset_size = 2000;
  TrainConfig gan;
  EncoderTrainConfig encoder;
  EvalConfig eval;

  void validate() const;
  /// Sets the data, GAN and encoder seeds from the master seed, one labelled stream each.
  void fan_out_seeds();

  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const SynthParams& p);
nlohmann::json to_json(const NetConfig& c);
nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const OptimizerConfig& o);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const EncoderTrainConfig& c);
nlohmann::json to_json(const EvalConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);

NetConfig net_config_from_json(const nlohmann::json& j);
SynthParams synth_params_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
EncoderTrainConfig encoder_config_from_json(const nlohmann::json& j);
/// Strict: every field must be present and no unknown field may appear.
ExperimentConfig experiment_from_json(const nlohmann::json& j);

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
ExperimentConfig preset(const std::string& name);

/// Reads a config file. The file may name a "preset" to start from and override
/// any subset of fields; unknown fields are rejected. The result is validated.
ExperimentConfig load_config(const std::filesystem::path& file);
ExperimentConfig parse_config(const nlohmann::json& j);
void save_config(const std::filesystem::path& file, const ExperimentConfig& cfg);

/// Ablation settings 'a'..'h'. 'a' is the base unchanged; the others apply
/// exactly one field change. Throws ConfigError for unknown settings.
ExperimentConfig ablation_config(char setting, const ExperimentConfig& base);
std::string ablation_label(char setting);
bool is_ablation_setting(char setting);

/// Dotted paths of leaf fields whose values differ between two configs.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace segshift
