#pragma once

// Training objectives for the layered generator, the critic and the encoder.
// All functions return scalar tensors that stay attached to the autograd graph.

#include <functional>
#include <random>

#include <torch/torch.h>

namespace segshift {

struct LossWeights {
  double gamma1 = 2.0;          // mask-size hinge weight
  double gamma2 = 2.0;          // mask binarization weight
  double lambda_gp = 10.0;      // gradient penalty strength
  double epsilon_drift = 0.001; // drift penalty on real scores
  double eta = 0.25;            // minimum mean mask value

  /// Throws ConfigError for negative/non-finite weights or eta outside (0, 1).
  void validate() const;

  bool operator==(const LossWeights&) const = default;
};

/// Maps a batch of images [N, C, H, W] to per-sample scores [N].
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Maps a batch of images to a batch of feature grids.
using FeatureMap = std::function<torch::Tensor(const torch::Tensor&)>;

/// mean_i max(0, eta - mean(m_i)). The hinge is applied per sample before
/// averaging over the batch.
torch::Tensor mask_size_loss(const torch::Tensor& masks, double eta);

/// mean over batch and pixels of min(m, 1 - m).
torch::Tensor mask_binary_loss(const torch::Tensor& masks);

struct GeneratorLossTerms {
  torch::Tensor adversarial;  // -mean D(x_hat)
  torch::Tensor size;         // mask_size_loss
  torch::Tensor binary;       // mask_binary_loss
  torch::Tensor total;        // adversarial + gamma1 * size + gamma2 * binary
};

GeneratorLossTerms generator_loss(const torch::Tensor& fake_scores, const torch::Tensor& masks,
                                  const LossWeights& weights);

/// mean_i (|grad D(x~_i)|_2 - 1)^2 with x~_i = zeta_i x_i + (1 - zeta_i) x^_i.
///
/// `zeta` holds one interpolation coefficient per sample. The gradient norm is
/// taken over every channel and pixel of a sample. The result keeps the double
/// backward graph so it can be minimized with respect to the critic.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, const torch::Tensor& zeta);

/// Draws zeta ~ U[0, 1] per sample from `rng` and evaluates the penalty.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, std::mt19937_64& rng);

struct DiscriminatorLossTerms {
  torch::Tensor real_mean;  // mean D(x)
  torch::Tensor fake_mean;  // mean D(x_hat)
  torch::Tensor penalty;    // gradient penalty (unweighted)
  torch::Tensor drift;      // mean D(x)^2 (unweighted)
  torch::Tensor total;      // fake_mean - real_mean + lambda * penalty + epsilon * drift
};

/// Critic objective given precomputed scores and penalty.
DiscriminatorLossTerms discriminator_loss(const torch::Tensor& real_scores,
                                          const torch::Tensor& fake_scores,
                                          const torch::Tensor& penalty, const LossWeights& weights);

/// Critic objective evaluated end to end: scores, zeta draws and penalty.
DiscriminatorLossTerms discriminator_loss(const Critic& critic, const torch::Tensor& real,
                                          const torch::Tensor& fake, const LossWeights& weights,
                                          std::mt19937_64& rng);

struct AutoencoderLossTerms {
  torch::Tensor l1;          // mean |x_E - x|
  torch::Tensor perceptual;  // mean (phi(x_E) - phi(x))^2
  torch::Tensor total;       // l1_weight * l1 + perceptual_weight * perceptual
};

AutoencoderLossTerms autoencoder_loss(const torch::Tensor& x, const torch::Tensor& x_e,
                                      const FeatureMap& features, double l1_weight = 1.0,
                                      double perceptual_weight = 1.0);

}  // namespace segshift
