#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segshift/config.hpp"
#include "segshift/nets.hpp"

namespace segshift {

inline constexpr const char* kGanCheckpointFormat = "segshift-gan-v1";
inline constexpr const char* kEncoderCheckpointFormat = "segshift-encoder-v1";

struct GanModels {
  LayeredGenerator generator{nullptr};
  Discriminator discriminator{nullptr};
};

/// Fresh networks; weights drawn from the labelled "init-*" streams of `seed`.
GanModels make_gan_models(const NetConfig& net, std::uint64_t seed);

/// Everything needed to continue a GAN run: both networks, both optimizer
/// states, the config snapshot and the step counter.
void save_gan_checkpoint(const std::filesystem::path& file, GanModels& models, torch::optim::Adam& opt_g,
                         torch::optim::Adam& opt_d, const TrainConfig& config, std::int64_t step);

struct GanCheckpoint {
  GanModels models;
  TrainConfig config;
  std::int64_t step = 0;
};

/// Loads networks and metadata. When optimizers are given, their state is restored too.
/// Throws std::runtime_error on a missing file or a wrong format tag.
GanCheckpoint load_gan_checkpoint(const std::filesystem::path& file, torch::optim::Adam* opt_g = nullptr,
                                  torch::optim::Adam* opt_d = nullptr);

struct EncoderCheckpoint {
  Encoder encoder{nullptr};
  NetConfig net;
  int chunk = 0;
  std::int64_t begin = 0;  // first image index covered (inclusive)
  std::int64_t end = 0;    // one past the last image index
};

void save_encoder_checkpoint(const std::filesystem::path& file, const EncoderCheckpoint& ckpt);
EncoderCheckpoint load_encoder_checkpoint(const std::filesystem::path& file);

/// All encoder_chunk_*.pt files in `dir`, ordered by chunk index.
std::vector<EncoderCheckpoint> load_encoder_checkpoints(const std::filesystem::path& dir);

}  // namespace segshift
