#pragma once

// Synthetic single-object scenes with exact ground-truth masks, image-folder
// ingestion, and the real-image / background augmentations used in training.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "segshift/seeds.hpp"

namespace segshift {

enum class ObjectKind { Ellipse, Rectangle, Polygon };
enum class Texture { Flat, Gradient, Noise };

std::string to_string(ObjectKind kind);
std::string to_string(Texture texture);
ObjectKind parse_object_kind(const std::string& s);
Texture parse_texture(const std::string& s);

/// Foreground colors are drawn per channel from [0.1, 0.9] and background
/// colors from [-0.9, -0.1], so figure and ground never share a color.
struct SynthParams {
  int resolution = 32;
  std::vector<ObjectKind> object_kinds{ObjectKind::Ellipse, ObjectKind::Rectangle, ObjectKind::Polygon};
  double scale_min = 0.15;  // object area as a fraction of the image
  double scale_max = 0.35;
  Texture foreground_texture = Texture::Flat;
  Texture background_texture = Texture::Gradient;
  int position_jitter = 6;  // max |offset| of the object center from the image center, pixels
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const SynthParams&) const = default;
};

struct DatasetRecord {
  torch::Tensor image;                  // [3, R, R] in [-1, 1]
  std::optional<torch::Tensor> gt_mask; // [1, R, R] in {0, 1}
  std::string name;
};

/// The synthetic scene before compositing. `mask` is the exact object support.
struct SynthLayers {
  torch::Tensor background;
  torch::Tensor foreground;
  torch::Tensor mask;
};

SynthLayers synth_layers(const SynthParams& params, Rng& rng);

/// One object composited onto a background. Throws ConfigError when no object
/// with an area fraction inside the scale range can be rasterized.
DatasetRecord synth_scene(const SynthParams& params, Rng& rng);

struct ManifestEntry {
  std::string file;
  std::uint64_t seed = 0;
  std::optional<std::string> gt_mask_file;

  bool operator==(const ManifestEntry&) const = default;
};

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kSynthParamsName = "synth_params.json";

/// Writes n records (PNG image + PNG mask) plus manifest.jsonl and synth_params.json.
/// Record i uses seed derive_seed(params.seed, "synth-record", i).
std::vector<ManifestEntry> build_synth_dataset(int n, const SynthParams& params,
                                               const std::filesystem::path& dir);

/// Regenerates the images listed in `entries` from their recorded seeds.
void rebuild_synth_dataset(const std::vector<ManifestEntry>& entries, const SynthParams& params,
                           const std::filesystem::path& dir);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries);

/// Lazily decoded folder of images, ordered by file name. Files that are not
/// decodable rasters are skipped with a warning on stderr.
class ImageFolder {
 public:
  ImageFolder(std::filesystem::path dir, int resolution, std::size_t limit = 0);

  std::size_t size() const { return files_.size(); }
  /// Decodes file i and resizes it to resolution x resolution. gt_mask is absent.
  DatasetRecord get(std::size_t i) const;
  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  int resolution_;
  std::vector<std::filesystem::path> files_;
};

ImageFolder load_image_folder(const std::filesystem::path& dir, int resolution, std::size_t limit = 0);

/// A dataset fully decoded into memory.
struct ImageDataset {
  torch::Tensor images;               // [N, 3, R, R]
  std::optional<torch::Tensor> masks; // [N, 1, R, R]
  std::vector<std::string> names;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  ImageDataset slice(int64_t begin, int64_t end) const;
};

/// Loads a dataset directory: a manifest-described dataset (with masks) when
/// manifest.jsonl exists, otherwise a plain image folder. Throws on empty input.
ImageDataset load_dataset(const std::filesystem::path& dir, int resolution, std::size_t limit = 0);

/// Bilinear (antialiased when shrinking) resize of [C,H,W] or [N,C,H,W] to size x size.
torch::Tensor resize_square(const torch::Tensor& image, int size);

/// Side of the square the real images are resized to before cropping: round(1.125 * resolution).
int crop_source_size(int resolution);

struct CropOffset {
  int y = 0;
  int x = 0;
};

/// Uniform over {0..slack}^2.
CropOffset sample_crop_offset(int slack, Rng& rng);

torch::Tensor crop(const torch::Tensor& image, int size, CropOffset offset);

/// Resize to 1.125x the resolution, then take a uniformly placed resolution-sized crop.
torch::Tensor augment_real(const torch::Tensor& image, int resolution, Rng& rng);

/// B' = clamp(mu + c (B - mu), -1, 1) with mu the per-image mean over all
/// channels and pixels. `factors` holds one c per batch sample.
torch::Tensor jitter_contrast(const torch::Tensor& background, const torch::Tensor& factors);

/// Same with c ~ U(lo, hi) per sample. Throws ConfigError unless 0 < lo <= hi.
torch::Tensor jitter_contrast(const torch::Tensor& background, std::pair<double, double> range, Rng& rng);

}  // namespace segshift
