#pragma once

// Mask binarization, IoU metrics, segmentation of real images through the
// trained encoders and generator, experiment/ablation runs and report files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segshift/checkpoint.hpp"
#include "segshift/config.hpp"
#include "segshift/data.hpp"
#include "segshift/train.hpp"

namespace segshift {

/// 1 where m > threshold (strict), else 0. Same shape and dtype as m.
torch::Tensor binarize_mask(const torch::Tensor& m, double threshold = 0.5);

/// |a & b| / |a | b| for binary masks of equal shape; 1 when both are empty.
/// Throws ShapeError on a shape mismatch and DomainError on non-binary input.
double iou(const torch::Tensor& a, const torch::Tensor& b);

struct SegmentationReport {
  std::string setting_id;
  std::vector<double> per_image_iou;
  double miou = 0.0;
  double reference_miou = 0.0;
  double mean_mask_size = 0.0;  // mean foreground fraction of the predicted masks
  std::int64_t n_images = 0;
  std::int64_t nonempty_gt = 0;

  nlohmann::json to_json() const;
};

/// Scores binary predictions [N,1,R,R] against binary ground truth of the same shape.
SegmentationReport score_masks(const torch::Tensor& predicted, const torch::Tensor& gts, const std::string& setting_id);

/// Scores the full-image prediction against each ground truth mask.
SegmentationReport reference_report(const torch::Tensor& gts, const std::string& setting_id = "reference");

struct Segmentation {
  torch::Tensor masks;       // binary [N,1,R,R]
  torch::Tensor soft_masks;  // generator masks before thresholding
  torch::Tensor composites;  // reconstructions x_E
};

/// Encodes image i with the chunk encoder whose [begin, end) range contains i and
/// renders its mask with the generator. Throws std::runtime_error when an image
/// index is covered by no encoder.
Segmentation segment_images(LayeredGenerator& generator, std::vector<EncoderCheckpoint>& encoders,
                            const torch::Tensor& images, double threshold = 0.5);

struct MaskStats {
  double mean_mask = 0.0;
  double binary_loss = 0.0;
  int samples = 0;
};

/// Mask statistics over freshly sampled latent codes (stream "mask-stats" of `seed`).
MaskStats generated_mask_stats(LayeredGenerator& generator, int samples, std::uint64_t seed);

struct ExperimentResult {
  std::optional<SegmentationReport> report;  // absent when the dataset has no ground truth
  std::vector<ChunkResult> chunks;
  MaskStats mask_stats;
  TrainResult train;
};

/// Trains the GAN on the whole dataset, trains chunk encoders on the first
/// eval_images images, segments them and writes gan/, encoder/, masks/ and the
/// report files under out_dir. With resume, GAN training continues from out_dir/gan.
ExperimentResult run_experiment(const ExperimentConfig& config, const ImageDataset& data,
                                const std::filesystem::path& out_dir, const std::string& setting_id = "a",
                                bool resume = false);

/// run_experiment on ablation_config(setting, base) in out_dir/<setting>.
ExperimentResult run_ablation(char setting, const ExperimentConfig& base, const ImageDataset& data,
                              const std::filesystem::path& out_dir, bool resume = false);

inline constexpr const char* kReportTableName = "table.csv";

/// Writes table.csv (one row per report, sorted by setting id) and report.json.
/// Throws std::invalid_argument for an empty list and std::runtime_error when
/// the directory cannot be written.
void emit_report(std::vector<SegmentationReport> reports, const std::filesystem::path& dir);

/// Tiles the first rows*cols images of [N,C,R,R] (C = 1 or 3, values in [-1,1]
/// for images and [0,1] for masks) into one grid image; missing tiles are black.
torch::Tensor montage(const torch::Tensor& tiles, int rows, int cols, bool is_mask);

/// Writes input/composite/mask/overlay montages and per-image 0/255 mask files.
void emit_figures(const std::filesystem::path& dir, const torch::Tensor& images, const Segmentation& seg,
                  const EvalConfig& config, const std::vector<std::string>& names = {});

}  // namespace segshift
