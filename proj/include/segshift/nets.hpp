#pragma once

// Desk-scale networks: a layered generator (two nets, or one trunk with three
// heads), a convolutional critic with a spatial feature tap, and a small
// residual encoder. All work at a fixed square resolution 4 * 2^L.

#include <cstdint>

#include <torch/torch.h>

#include "segshift/compose.hpp"
#include "segshift/seeds.hpp"

namespace segshift {

struct NetConfig {
  int resolution = 32;
  int latent_dim = 64;
  int gen_channels = 64;   // generator width at 4x4, halved per upsampling step
  int disc_channels = 16;  // critic/encoder width at full resolution, doubled per downsampling
  int max_channels = 128;
  int min_channels = 8;
  int feature_tap = 8;     // spatial size of the critic feature map; 0 disables the tap
  bool single_generator = false;

  void validate() const;
  /// Number of 2x resampling stages between 4x4 and `resolution`.
  int levels() const;

  bool operator==(const NetConfig&) const = default;
};

/// Pixelwise feature normalization (unit mean square across channels).
torch::Tensor pixel_norm(const torch::Tensor& x, double eps = 1e-8);

/// Latent code -> image-like tensor [N, out_channels, R, R] (pre-activation).
class UpsamplingNetImpl : public torch::nn::Module {
 public:
  UpsamplingNetImpl(const NetConfig& cfg, int out_channels);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  int base_channels_;
  torch::nn::Linear input_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(UpsamplingNet);

/// Produces (B, F, m) from latent codes. Images pass through tanh; the mask
/// through a sigmoid rescaled to (1e-6, 1 - 1e-6) so it stays strictly inside (0, 1).
class LayeredGeneratorImpl : public torch::nn::Module {
 public:
  explicit LayeredGeneratorImpl(const NetConfig& cfg);

  /// One code per sample [N, k], shared by background and foreground nets.
  LayeredScene forward(const torch::Tensor& z);

  /// Codes grouped per sample [N, c, k]. With c == 1 both nets share the code;
  /// with c >= 2 code 0 drives the background net and code 1 the foreground/mask
  /// net. A single-trunk generator consumes code 0 only.
  LayeredScene forward_codes(const torch::Tensor& codes);

  int code_slots() const { return cfg_.single_generator ? 1 : 2; }
  const NetConfig& config() const { return cfg_; }

 private:
  LayeredScene split_heads(const torch::Tensor& bg_raw, const torch::Tensor& fg_raw) const;

  NetConfig cfg_;
  UpsamplingNet background_{nullptr};
  UpsamplingNet foreground_{nullptr};
  UpsamplingNet trunk_{nullptr};
};
TORCH_MODULE(LayeredGenerator);

/// Strided convolutional critic: image [N, 3, R, R] -> score [N].
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  /// Activations at the configured tap, [N, C, tap, tap]. Throws ConfigError
  /// when no tap is configured.
  torch::Tensor features(const torch::Tensor& x);
  /// Shape of the tapped feature map for one sample: {C, tap, tap}.
  std::vector<int64_t> feature_shape() const;

 private:
  NetConfig cfg_;
  torch::nn::Conv2d from_rgb_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::Linear head_{nullptr};
  int tap_block_ = -1;
  std::vector<int64_t> tap_shape_;
};
TORCH_MODULE(Discriminator);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Residual convolutional encoder with a fully connected head of size c * k.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const NetConfig& cfg, int code_count);
  /// [N, 3, R, R] -> [N, c, k]. Throws std::invalid_argument on wrong resolution.
  torch::Tensor forward(const torch::Tensor& x);
  int code_count() const { return code_count_; }

 private:
  NetConfig cfg_;
  int code_count_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Encoder);

LayeredScene generate_layers(LayeredGenerator& gen, const torch::Tensor& z);
torch::Tensor discriminate(Discriminator& disc, const torch::Tensor& x);
torch::Tensor discriminator_features(Discriminator& disc, const torch::Tensor& x);
torch::Tensor encode(Encoder& enc, const torch::Tensor& x);

/// i.i.d. standard normal codes [batch, k] (float32).
torch::Tensor sample_latent(int64_t batch, int64_t k, Rng& rng);

int64_t parameter_count(const torch::nn::Module& module);

/// FNV-1a over the raw bytes of every parameter, in registration order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace segshift
