#include "segshift/nets.hpp"

#include <algorithm>
#include <cstring>

#include "segshift/errors.hpp"

namespace segshift {
namespace {

constexpr double kLeak = 0.2;
constexpr double kMaskMargin = 1e-6;

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeak); }

int clamp_width(const NetConfig& cfg, int w) { return std::clamp(w, cfg.min_channels, cfg.max_channels); }

int gen_width(const NetConfig& cfg, int level) { return clamp_width(cfg, cfg.gen_channels >> level); }

int disc_width(const NetConfig& cfg, int level) {
  return clamp_width(cfg, cfg.disc_channels << std::min(level, 16));
}

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

void require_images(const torch::Tensor& x, int resolution, const char* who) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != resolution || x.size(3) != resolution) {
    throw std::invalid_argument(std::string(who) + ": expected [N, 3, " + std::to_string(resolution) +
                                ", " + std::to_string(resolution) + "] input");
  }
}

}  // namespace

void NetConfig::validate() const {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
    throw ConfigError("resolution must be a power of two >= 8, got " + std::to_string(resolution));
  }
  if (latent_dim < 1 || gen_channels < 1 || disc_channels < 1 || min_channels < 1 ||
      max_channels < min_channels) {
    throw ConfigError("network widths and latent_dim must be positive");
  }
  if (feature_tap != 0) {
    bool ok = false;
    for (int r = resolution / 2; r >= 4; r /= 2) {
      ok = ok || r == feature_tap;
    }
    if (!ok) {
      throw ConfigError("feature_tap " + std::to_string(feature_tap) +
                        " is not a critic block output for resolution " + std::to_string(resolution));
    }
  }
}

int NetConfig::levels() const {
  int l = 0;
  for (int r = 4; r < resolution; r *= 2) {
    ++l;
  }
  return l;
}

torch::Tensor pixel_norm(const torch::Tensor& x, double eps) {
  return x * torch::rsqrt(x.square().mean(1, /*keepdim=*/true) + eps);
}

UpsamplingNetImpl::UpsamplingNetImpl(const NetConfig& cfg, int out_channels)
    : base_channels_(gen_width(cfg, 0)) {
  input_ = register_module("input", torch::nn::Linear(cfg.latent_dim, base_channels_ * 16));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  blocks_->push_back(conv3(base_channels_, base_channels_));
  for (int l = 1; l <= cfg.levels(); ++l) {
    blocks_->push_back(conv3(gen_width(cfg, l - 1), gen_width(cfg, l)));
  }
  output_ = register_module(
      "output", torch::nn::Conv2d(torch::nn::Conv2dOptions(gen_width(cfg, cfg.levels()), out_channels, 1)));
}

torch::Tensor UpsamplingNetImpl::forward(const torch::Tensor& z) {
  auto h = pixel_norm(z);
  h = pixel_norm(lrelu(input_->forward(h)).view({z.size(0), base_channels_, 4, 4}));
  for (std::size_t i = 0; i < blocks_->size(); ++i) {
    if (i > 0) {
      h = torch::upsample_nearest2d(h, std::vector<int64_t>{h.size(2) * 2, h.size(3) * 2});
    }
    h = pixel_norm(lrelu(blocks_[i]->as<torch::nn::Conv2dImpl>()->forward(h)));
  }
  return output_->forward(h);
}

LayeredGeneratorImpl::LayeredGeneratorImpl(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.single_generator) {
    trunk_ = register_module("trunk", UpsamplingNet(cfg_, 7));
  } else {
    background_ = register_module("background", UpsamplingNet(cfg_, 3));
    foreground_ = register_module("foreground", UpsamplingNet(cfg_, 4));
  }
}

LayeredScene LayeredGeneratorImpl::split_heads(const torch::Tensor& bg_raw, const torch::Tensor& fg_raw) const {
  LayeredScene s;
  s.background = torch::tanh(bg_raw);
  s.foreground = torch::tanh(fg_raw.narrow(1, 0, 3));
  s.mask = kMaskMargin + (1.0 - 2.0 * kMaskMargin) * torch::sigmoid(fg_raw.narrow(1, 3, 1));
  return s;
}

LayeredScene LayeredGeneratorImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != cfg_.latent_dim) {
    throw std::invalid_argument("generator expects codes of shape [N, " + std::to_string(cfg_.latent_dim) + "]");
  }
  return forward_codes(z.unsqueeze(1));
}

LayeredScene LayeredGeneratorImpl::forward_codes(const torch::Tensor& codes) {
  if (codes.dim() != 3 || codes.size(1) < 1 || codes.size(2) != cfg_.latent_dim) {
    throw std::invalid_argument("generator expects code groups of shape [N, c, " +
                                std::to_string(cfg_.latent_dim) + "]");
  }
  const auto first = codes.select(1, 0);
  if (cfg_.single_generator) {
    const auto raw = trunk_->forward(first);
    return split_heads(raw.narrow(1, 0, 3), raw.narrow(1, 3, 4));
  }
  const auto second = codes.size(1) >= 2 ? codes.select(1, 1) : first;
  return split_heads(background_->forward(first), foreground_->forward(second));
}

DiscriminatorImpl::DiscriminatorImpl(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int levels = cfg_.levels();
  from_rgb_ = register_module("from_rgb",
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(3, disc_width(cfg_, 0), 1)));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  int res = cfg_.resolution;
  for (int l = 0; l < levels; ++l) {
    blocks_->push_back(conv3(disc_width(cfg_, l), disc_width(cfg_, l + 1), 2));
    res /= 2;
    if (res == cfg_.feature_tap) {
      tap_block_ = l;
      tap_shape_ = {disc_width(cfg_, l + 1), res, res};
    }
  }
  head_ = register_module("head", torch::nn::Linear(disc_width(cfg_, levels) * 16, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  require_images(x, cfg_.resolution, "discriminator");
  auto h = lrelu(from_rgb_->forward(x));
  for (const auto& block : *blocks_) {
    h = lrelu(block->as<torch::nn::Conv2dImpl>()->forward(h));
  }
  return head_->forward(h.flatten(1)).squeeze(1);
}

torch::Tensor DiscriminatorImpl::features(const torch::Tensor& x) {
  if (tap_block_ < 0) {
    throw ConfigError("discriminator has no feature tap configured");
  }
  require_images(x, cfg_.resolution, "discriminator features");
  auto h = lrelu(from_rgb_->forward(x));
  for (int l = 0; l <= tap_block_; ++l) {
    h = lrelu(blocks_[static_cast<std::size_t>(l)]->as<torch::nn::Conv2dImpl>()->forward(h));
  }
  return h;
}

std::vector<int64_t> DiscriminatorImpl::feature_shape() const {
  if (tap_block_ < 0) {
    throw ConfigError("discriminator has no feature tap configured");
  }
  return tap_shape_;
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1_ = register_module("conv1", conv3(channels, channels));
  conv2_ = register_module("conv2", conv3(channels, channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return lrelu(x + conv2_->forward(lrelu(conv1_->forward(x))));
}

EncoderImpl::EncoderImpl(const NetConfig& cfg, int code_count) : cfg_(cfg), code_count_(code_count) {
  cfg_.validate();
  if (code_count < 1) {
    throw ConfigError("encoder code count must be >= 1");
  }
  torch::nn::Sequential body;
  body->push_back(conv3(3, disc_width(cfg_, 0)));
  body->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeak)));
  body->push_back(ResidualBlock(disc_width(cfg_, 0)));
  int res = cfg_.resolution;
  int level = 0;
  while (res > 8) {
    body->push_back(conv3(disc_width(cfg_, level), disc_width(cfg_, level + 1), 2));
    body->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeak)));
    ++level;
    res /= 2;
    body->push_back(ResidualBlock(disc_width(cfg_, level)));
  }
  body_ = register_module("body", body);
  head_ = register_module(
      "head", torch::nn::Linear(disc_width(cfg_, level) * res * res, code_count_ * cfg_.latent_dim));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  require_images(x, cfg_.resolution, "encoder");
  return head_->forward(body_->forward(x).flatten(1)).view({x.size(0), code_count_, cfg_.latent_dim});
}

LayeredScene generate_layers(LayeredGenerator& gen, const torch::Tensor& z) { return gen->forward(z); }

torch::Tensor discriminate(Discriminator& disc, const torch::Tensor& x) { return disc->forward(x); }

torch::Tensor discriminator_features(Discriminator& disc, const torch::Tensor& x) { return disc->features(x); }

torch::Tensor encode(Encoder& enc, const torch::Tensor& x) { return enc->forward(x); }

torch::Tensor sample_latent(int64_t batch, int64_t k, Rng& rng) {
  if (batch < 1 || k < 1) {
    throw std::invalid_argument("sample_latent: batch and k must be >= 1");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  auto out = torch::empty({batch, k}, torch::kFloat);
  auto acc = out.accessor<float, 2>();
  for (int64_t i = 0; i < batch; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      acc[i][j] = static_cast<float>(normal(rng));
    }
  }
  return out;
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) {
    n += p.numel();
  }
  return n;
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : module.parameters()) {
    const auto c = p.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace segshift
