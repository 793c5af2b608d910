#pragma once

// Adversarial training of the layered generator under random foreground
// shifts, and per-chunk encoder training against the frozen generator.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "segshift/checkpoint.hpp"
#include "segshift/config.hpp"

namespace segshift {

/// Every loss term of one training step, logged separately.
struct StepMetrics {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double d_real = 0.0;  // mean D(x)
  double d_fake = 0.0;  // mean D(x_hat)
  double gp = 0.0;      // unweighted gradient penalty
  double drift = 0.0;   // unweighted mean D(x)^2
  double g_loss = 0.0;
  double g_adv = 0.0;   // -mean D(x_hat) in the generator step
  double l_size = 0.0;
  double l_binary = 0.0;
  double mean_mask = 0.0;

  nlohmann::json to_json() const;
  static StepMetrics from_json(const nlohmann::json& j);
  bool operator==(const StepMetrics&) const = default;
};

/// Generator pair, critic and their optimizers; owned by the single training driver.
struct GanState {
  TrainConfig config;
  GanModels models;
  std::unique_ptr<torch::optim::Adam> opt_g;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::int64_t step = 0;
  std::filesystem::path dump_dir = ".";  // where non-finite batches are written

  /// Fresh state with weights from the config seed.
  static GanState create(const TrainConfig& config);
  /// Restores networks, optimizer moments and the step counter.
  static GanState resume(const std::filesystem::path& checkpoint);
  void save(const std::filesystem::path& checkpoint);
};

/// Applies the optional background contrast jitter, draws one shift per
/// sample and returns the shifted composites. The shifts are drawn only after
/// the generator outputs exist, from `rng`, so they cannot depend on z.
torch::Tensor perturbed_composites(const LayeredScene& scene, const TrainConfig& config, Rng& rng);

/// One critic update on real_batch and fresh shifted composites; randomness from
/// `stream`. Fills the critic fields of `m`. Generator parameters are untouched.
void discriminator_update(GanState& state, const torch::Tensor& real_batch, std::uint64_t stream, StepMetrics& m);

/// One generator update on fresh shifted composites; randomness from `stream`.
/// Fills the generator fields of `m`. Critic parameters are untouched.
void generator_update(GanState& state, std::int64_t batch_size, std::uint64_t stream, StepMetrics& m);

/// One critic update on (real_batch, fresh shifted composites) followed by one
/// generator update on new composites with newly drawn shifts. All randomness
/// comes from streams derived from (config.seed, state.step). Increments step.
/// Throws NonFiniteLossError after dumping the offending batch.
StepMetrics gan_train_step(GanState& state, const torch::Tensor& real_batch);

/// Draws training batches from a dataset: 1.125x resize once, then per-step
/// uniform image choice and uniform crop offsets (or a plain resize when
/// random crops are disabled).
class RealBatchSampler {
 public:
  RealBatchSampler(const torch::Tensor& images, const TrainConfig& config);
  torch::Tensor batch(std::int64_t step) const;

 private:
  torch::Tensor source_;
  TrainConfig config_;
};

struct TrainOptions {
  bool resume = false;
  std::int64_t stop_after_step = 0;  // > 0: stop (and checkpoint) once this step count is reached
  std::int64_t progress_every = 0;  // > 0: one progress line on stderr every this many steps
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::int64_t steps = 0;
  std::optional<StepMetrics> last;
};

inline constexpr const char* kGanCheckpointName = "gan_checkpoint.pt";
inline constexpr const char* kMetricsName = "metrics.jsonl";

/// Trains for config.total_steps() steps, appending metrics to out_dir/metrics.jsonl
/// and checkpointing to out_dir/gan_checkpoint.pt every checkpoint_every steps and
/// at the end. With resume, continues from the checkpoint in out_dir.
TrainResult train_gan(const TrainConfig& config, const torch::Tensor& images, const std::filesystem::path& out_dir,
                      const TrainOptions& options = {});

std::vector<StepMetrics> read_metrics(const std::filesystem::path& file);

struct ChunkResult {
  int chunk = 0;
  std::int64_t begin = 0;
  std::int64_t end = 0;
  double initial_loss = 0.0;  // full-chunk autoencoder loss before the first update
  double final_loss = 0.0;    // full-chunk autoencoder loss after the last update
  std::vector<double> curve;  // per-iteration minibatch loss
  std::filesystem::path checkpoint;
};

/// Reconstruction x_E through the generator (no shift) for a batch of code groups.
torch::Tensor reconstruct(LayeredGenerator& generator, const torch::Tensor& codes);

/// Trains one freshly initialized encoder on `images` (one chunk).
ChunkResult train_encoder_chunk(const EncoderTrainConfig& config, GanModels& frozen, const torch::Tensor& images,
                                int chunk, Encoder* trained = nullptr);

/// Splits `images` into chunks of chunk_size and trains an independent encoder on
/// each, writing encoder_chunk_NNNN.pt and loss_curve_chunk_NNNN.csv into out_dir.
/// Generator and critic parameters are checked bit-identical afterwards
/// (std::logic_error otherwise). Throws ConfigError when the critic has no feature tap.
std::vector<ChunkResult> train_encoder(const EncoderTrainConfig& config, GanModels& frozen,
                                       const torch::Tensor& images, const std::filesystem::path& out_dir,
                                       int max_chunks = 0);

void freeze(torch::nn::Module& module);

}  // namespace segshift
