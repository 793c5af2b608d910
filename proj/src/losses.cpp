#include "segshift/losses.hpp"

#include <cmath>
#include <random>

#include "segshift/errors.hpp"

namespace segshift {
namespace {

void require_batch(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() == 0 || t.size(0) == 0) {
    throw std::invalid_argument(std::string(what) + ": empty batch");
  }
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace

void LossWeights::validate() const {
  if (!finite_nonneg(gamma1) || !finite_nonneg(gamma2) || !finite_nonneg(lambda_gp) ||
      !finite_nonneg(epsilon_drift)) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
  if (!(eta > 0.0 && eta < 1.0)) {
    throw ConfigError("eta must lie in (0, 1)");
  }
}

torch::Tensor mask_size_loss(const torch::Tensor& masks, double eta) {
  require_batch(masks, "mask_size_loss");
  const auto per_sample = masks.flatten(1).mean(1);
  return torch::clamp_min(eta - per_sample, 0.0).mean();
}

torch::Tensor mask_binary_loss(const torch::Tensor& masks) {
  require_batch(masks, "mask_binary_loss");
  return torch::minimum(masks, 1.0 - masks).mean();
}

GeneratorLossTerms generator_loss(const torch::Tensor& fake_scores, const torch::Tensor& masks,
                                  const LossWeights& weights) {
  require_batch(fake_scores, "generator_loss");
  require_batch(masks, "generator_loss");
  if (fake_scores.size(0) != masks.size(0)) {
    throw std::invalid_argument("generator_loss: score and mask batch sizes differ");
  }
  GeneratorLossTerms t;
  t.adversarial = -fake_scores.mean();
  t.size = mask_size_loss(masks, weights.eta);
  t.binary = mask_binary_loss(masks);
  t.total = t.adversarial + weights.gamma1 * t.size + weights.gamma2 * t.binary;
  return t;
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, const torch::Tensor& zeta) {
  require_batch(real, "gradient_penalty");
  require_same_shape(real, fake, "gradient_penalty");
  if (zeta.dim() != 1 || zeta.size(0) != real.size(0)) {
    throw ShapeError("gradient_penalty: need one interpolation coefficient per sample");
  }
  std::vector<int64_t> bshape(static_cast<std::size_t>(real.dim()), 1);
  bshape[0] = real.size(0);
  const auto z = zeta.to(real.dtype()).view(bshape);
  // Keep the graph to real/fake when they have one, so the penalty is
  // differentiable with respect to the layers that produced them as well.
  auto mixed = z * real + (1.0 - z) * fake;
  if (!mixed.requires_grad()) {
    mixed = mixed.detach().requires_grad_(true);
  }
  const auto scores = critic(mixed);
  torch::Tensor grads;
  if (scores.requires_grad()) {
    grads = torch::autograd::grad({scores.sum()}, {mixed}, /*grad_outputs=*/{},
                                  /*retain_graph=*/true, /*create_graph=*/true,
                                  /*allow_unused=*/true)[0];
  }
  // A critic that ignores its input has zero gradient everywhere.
  if (!grads.defined()) {
    grads = torch::zeros_like(mixed);
  }
  const auto norms = grads.flatten(1).norm(2, 1);
  return (norms - 1.0).square().mean();
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, std::mt19937_64& rng) {
  require_batch(real, "gradient_penalty");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> draws(static_cast<std::size_t>(real.size(0)));
  for (auto& d : draws) {
    d = unit(rng);
  }
  const auto zeta = torch::tensor(draws, torch::kDouble);
  return gradient_penalty(critic, real, fake, zeta);
}

DiscriminatorLossTerms discriminator_loss(const torch::Tensor& real_scores,
                                          const torch::Tensor& fake_scores,
                                          const torch::Tensor& penalty, const LossWeights& weights) {
  require_batch(real_scores, "discriminator_loss");
  require_batch(fake_scores, "discriminator_loss");
  DiscriminatorLossTerms t;
  t.real_mean = real_scores.mean();
  t.fake_mean = fake_scores.mean();
  t.penalty = penalty;
  t.drift = real_scores.square().mean();
  t.total = t.fake_mean - t.real_mean + weights.lambda_gp * t.penalty +
            weights.epsilon_drift * t.drift;
  return t;
}

DiscriminatorLossTerms discriminator_loss(const Critic& critic, const torch::Tensor& real,
                                          const torch::Tensor& fake, const LossWeights& weights,
                                          std::mt19937_64& rng) {
  require_same_shape(real, fake, "discriminator_loss");
  const auto penalty = gradient_penalty(critic, real, fake, rng);
  return discriminator_loss(critic(real), critic(fake), penalty, weights);
}

AutoencoderLossTerms autoencoder_loss(const torch::Tensor& x, const torch::Tensor& x_e,
                                      const FeatureMap& features, double l1_weight,
                                      double perceptual_weight) {
  require_batch(x, "autoencoder_loss");
  require_same_shape(x, x_e, "autoencoder_loss");
  AutoencoderLossTerms t;
  t.l1 = (x_e - x).abs().mean();
  const auto fx = features(x);
  const auto fe = features(x_e);
  require_same_shape(fx, fe, "autoencoder_loss features");
  t.perceptual = (fe - fx).square().mean();
  t.total = l1_weight * t.l1 + perceptual_weight * t.perceptual;
  return t;
}

}  // namespace segshift
