#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>

#include "segshift/compose.hpp"
#include "segshift/errors.hpp"
#include "segshift/losses.hpp"
#include "segshift/nets.hpp"
#include "test_support.hpp"

using namespace segshift;
using segshift::testing::gradcheck_rel_error;

namespace {

int64_t clampw(const NetConfig& c, int64_t w) {
  return std::clamp<int64_t>(w, c.min_channels, c.max_channels);
}
int64_t gw(const NetConfig& c, int l) { return clampw(c, c.gen_channels >> l); }
int64_t dw(const NetConfig& c, int l) { return clampw(c, static_cast<int64_t>(c.disc_channels) << l); }
int64_t conv(int64_t in, int64_t out, int64_t k) { return in * out * k * k + out; }

// Parameter counts written out from the architecture description.
int64_t expected_upsampling(const NetConfig& c, int64_t out) {
  const int levels = static_cast<int>(std::log2(c.resolution / 4));
  int64_t n = c.latent_dim * 16 * gw(c, 0) + 16 * gw(c, 0) + conv(gw(c, 0), gw(c, 0), 3);
  for (int l = 1; l <= levels; ++l) {
    n += conv(gw(c, l - 1), gw(c, l), 3);
  }
  return n + conv(gw(c, levels), out, 1);
}

int64_t expected_discriminator(const NetConfig& c) {
  const int levels = static_cast<int>(std::log2(c.resolution / 4));
  int64_t n = conv(3, dw(c, 0), 1);
  for (int l = 0; l < levels; ++l) {
    n += conv(dw(c, l), dw(c, l + 1), 3);
  }
  return n + dw(c, levels) * 16 + 1;
}

int64_t expected_encoder(const NetConfig& c, int64_t codes) {
  const auto res_block = [](int64_t ch) { return 2 * conv(ch, ch, 3); };
  int64_t n = conv(3, dw(c, 0), 3) + res_block(dw(c, 0));
  int level = 0;
  int64_t res = c.resolution;
  while (res > 8) {
    n += conv(dw(c, level), dw(c, level + 1), 3) + res_block(dw(c, level + 1));
    ++level;
    res /= 2;
  }
  return n + dw(c, level) * res * res * codes * c.latent_dim + codes * c.latent_dim;
}

NetConfig small_config() {
  NetConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.gen_channels = 16;
  c.disc_channels = 4;
  c.max_channels = 16;
  c.min_channels = 4;
  c.feature_tap = 8;
  return c;
}

}  // namespace

TEST_CASE("net config validation") {
  NetConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.levels() == 3);
  c.resolution = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetConfig{};
  c.feature_tap = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.feature_tap = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.feature_tap = 0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("parameter counts and output shapes for every supported resolution") {
  for (const int res : {16, 32, 64, 128}) {
    CAPTURE(res);
    torch::manual_seed(1);
    NetConfig c;
    c.resolution = res;
    for (const bool single : {false, true}) {
      c.single_generator = single;
      LayeredGenerator g(c);
      const int64_t expect = single ? expected_upsampling(c, 7) : expected_upsampling(c, 3) + expected_upsampling(c, 4);
      CHECK(parameter_count(*g) == expect);
      const auto s = g->forward(torch::randn({2, c.latent_dim}));
      CHECK(s.background.sizes() == torch::IntArrayRef({2, 3, res, res}));
      CHECK(s.foreground.sizes() == torch::IntArrayRef({2, 3, res, res}));
      CHECK(s.mask.sizes() == torch::IntArrayRef({2, 1, res, res}));
    }
    c.single_generator = false;
    Discriminator d(c);
    CHECK(parameter_count(*d) == expected_discriminator(c));
    const auto x = torch::randn({2, 3, res, res});
    CHECK(d->forward(x).sizes() == torch::IntArrayRef({2}));
    const auto f = d->features(x);
    const auto fs = d->feature_shape();
    CHECK(f.sizes() == torch::IntArrayRef({2, fs[0], fs[1], fs[2]}));
    CHECK(fs[1] == 8);
    CHECK(res % fs[1] == 0);
    Encoder e(c, 2);
    CHECK(parameter_count(*e) == expected_encoder(c, 2));
    CHECK(e->forward(x).sizes() == torch::IntArrayRef({2, 2, c.latent_dim}));
  }
}

TEST_CASE("generator output contract") {
  torch::manual_seed(2);
  NetConfig c;
  LayeredGenerator g(c);
  Rng rng(3);
  const auto z = sample_latent(2, 64, rng);
  const auto a = generate_layers(g, z);
  const auto b = generate_layers(g, z);
  CHECK(torch::equal(a.background, b.background));
  CHECK(torch::equal(a.foreground, b.foreground));
  CHECK(torch::equal(a.mask, b.mask));
  CHECK(a.background.abs().le(1).all().item<bool>());
  CHECK_THROWS_AS(g->forward(torch::randn({2, 32})), std::invalid_argument);
  CHECK_THROWS_AS(g->forward_codes(torch::randn({2, 64})), std::invalid_argument);
}

TEST_CASE("masks stay strictly inside (0,1) even for extreme codes") {
  torch::manual_seed(4);
  LayeredGenerator g(NetConfig{});
  // Blow up the mask head so the sigmoid saturates in float.
  for (auto& p : g->named_parameters()) {
    if (p.key().find("foreground.output") != std::string::npos) {
      p.value().data().mul_(1e4);
    }
  }
  const auto m = g->forward(torch::randn({8, 64}) * 100).mask;
  CHECK(m.gt(0).all().item<bool>());
  CHECK(m.lt(1).all().item<bool>());
}

TEST_CASE("a fresh generator does not saturate the mask") {
  for (uint64_t seed : {1, 2, 3}) {
    torch::manual_seed(seed);
    LayeredGenerator g(NetConfig{});
    Rng rng(seed);
    torch::NoGradGuard no_grad;
    const double mean = g->forward(sample_latent(100, 64, rng)).mask.mean().item<double>();
    CHECK(mean > 0.05);
    CHECK(mean < 0.95);
  }
}

TEST_CASE("code routing: code 0 drives the background, code 1 the foreground and mask") {
  torch::manual_seed(5);
  NetConfig c = small_config();
  LayeredGenerator g(c);
  const auto codes = torch::randn({3, 2, c.latent_dim});
  auto other_fg = codes.clone();
  other_fg.select(1, 1).normal_();
  auto other_bg = codes.clone();
  other_bg.select(1, 0).normal_();
  const auto base = g->forward_codes(codes);
  const auto fg_changed = g->forward_codes(other_fg);
  const auto bg_changed = g->forward_codes(other_bg);
  CHECK(torch::equal(base.background, fg_changed.background));
  CHECK_FALSE(torch::equal(base.foreground, fg_changed.foreground));
  CHECK_FALSE(torch::equal(base.mask, fg_changed.mask));
  CHECK_FALSE(torch::equal(base.background, bg_changed.background));
  CHECK(torch::equal(base.foreground, bg_changed.foreground));
  CHECK(torch::equal(base.mask, bg_changed.mask));

  // One code per sample feeds both nets.
  const auto z = codes.select(1, 0);
  const auto shared = g->forward(z);
  const auto twice = g->forward_codes(torch::stack({z, z}, 1));
  CHECK(torch::equal(shared.background, twice.background));
  CHECK(torch::equal(shared.mask, twice.mask));
  CHECK(g->code_slots() == 2);

  c.single_generator = true;
  LayeredGenerator single(c);
  CHECK(single->code_slots() == 1);
  CHECK(torch::equal(single->forward_codes(codes).mask, single->forward_codes(other_fg).mask));
}

TEST_CASE("discriminator is a per-sample map") {
  torch::manual_seed(6);
  Discriminator d(NetConfig{});
  torch::NoGradGuard no_grad;
  CHECK(std::isfinite(discriminate(d, torch::zeros({1, 3, 32, 32}))[0].item<double>()));
  const auto x = torch::rand({4, 3, 32, 32}) * 2 - 1;
  const auto s = discriminate(d, x);
  const auto perm = torch::tensor({2, 0, 3, 1});
  CHECK(torch::allclose(discriminate(d, x.index_select(0, perm)), s.index_select(0, perm), 1e-5, 1e-6));
  const auto dup = discriminate(d, torch::cat({x.narrow(0, 1, 1), x.narrow(0, 1, 1)}));
  CHECK(dup[0].item<double>() == doctest::Approx(dup[1].item<double>()).epsilon(1e-6));
  CHECK(torch::equal(discriminator_features(d, x), discriminator_features(d, x)));
  CHECK_THROWS_AS(d->forward(torch::zeros({1, 3, 16, 16})), std::invalid_argument);

  NetConfig no_tap;
  no_tap.feature_tap = 0;
  Discriminator bare(no_tap);
  CHECK_THROWS_AS(bare->features(x), ConfigError);
  CHECK_THROWS_AS(bare->feature_shape(), ConfigError);
}

TEST_CASE("encoder contract") {
  torch::manual_seed(7);
  NetConfig c;
  Encoder e(c, 2);
  torch::NoGradGuard no_grad;
  const auto x = torch::rand({3, 3, 32, 32});
  const auto codes = encode(e, x);
  CHECK(codes.sizes() == torch::IntArrayRef({3, 2, 64}));
  CHECK(torch::equal(codes, encode(e, x)));
  CHECK_THROWS_AS(e->forward(torch::zeros({1, 3, 16, 16})), std::invalid_argument);
  CHECK_THROWS_AS(Encoder(c, 0), ConfigError);
}

TEST_CASE("sample_latent statistics and reproducibility") {
  Rng rng(8);
  const int64_t n = 10000;
  const int64_t k = 64;
  const auto z = sample_latent(n, k, rng);
  CHECK(z.dtype() == torch::kFloat);
  CHECK(std::abs(z.to(torch::kDouble).mean().item<double>()) <= 4.0 / std::sqrt(static_cast<double>(n * k)));
  CHECK(std::abs(z.to(torch::kDouble).var().item<double>() - 1.0) < 0.01);
  Rng a(9);
  Rng b(9);
  CHECK(torch::equal(sample_latent(4, 512, a), sample_latent(4, 512, b)));
  CHECK_THROWS_AS(sample_latent(0, 4, a), std::invalid_argument);
}

TEST_CASE("generator loss reaches every generator parameter at initialization") {
  for (const bool single : {false, true}) {
    torch::manual_seed(10);
    NetConfig c = small_config();
    c.single_generator = single;
    LayeredGenerator g(c);
    Discriminator d(c);
    Rng rng(11);
    const auto scene = g->forward(sample_latent(4, c.latent_dim, rng));
    const auto fake = compose_shifted(scene, sample_shifts(4, 2, rng), 2);
    const auto loss = generator_loss(d->forward(fake), scene.mask, LossWeights{}).total;
    const auto params = g->parameters();
    const auto grads = torch::autograd::grad({loss}, params, {}, false, false, true);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      CAPTURE(i);
      REQUIRE(grads[i].defined());
      CHECK(grads[i].abs().sum().item<double>() > 0.0);
    }
  }
}

TEST_CASE("network parameter gradients match central differences") {
  torch::manual_seed(12);
  NetConfig c = small_config();
  c.resolution = 8;
  c.feature_tap = 4;
  LayeredGenerator g(c);
  Discriminator d(c);
  Encoder e(c, 2);
  g->to(torch::kDouble);
  d->to(torch::kDouble);
  e->to(torch::kDouble);
  const auto z = torch::randn({2, c.latent_dim}, torch::kDouble);
  const auto real = torch::rand({2, 3, 8, 8}, torch::kDouble) * 2 - 1;
  const std::vector<Shift> shifts{{1, 0}, {0, -1}};
  const auto fake = [&] {
    const auto s = g->forward(z);
    return std::make_pair(compose_shifted(s, shifts, 1), s.mask);
  };
  const auto gen_loss = [&] {
    const auto [x, m] = fake();
    return generator_loss(d->forward(x), m, LossWeights{}).total;
  };
  const Critic critic = [&](const torch::Tensor& x) { return d->forward(x); };
  const auto zeta = torch::tensor({0.25, 0.75}, torch::kDouble);
  const auto disc_loss = [&] {
    const auto x = fake().first.detach();
    return discriminator_loss(d->forward(real), d->forward(x), gradient_penalty(critic, real, x, zeta), LossWeights{})
        .total;
  };
  const FeatureMap feats = [&](const torch::Tensor& x) { return d->features(x); };
  const auto ae_loss = [&] { return autoencoder_loss(real, compose(g->forward_codes(e->forward(real))), feats).total; };

  const auto coords = [](const torch::Tensor& p) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < p.numel(); i += std::max<int64_t>(1, p.numel() / 6)) {
      idx.push_back(i);
    }
    return idx;
  };
  for (auto& p : g->parameters()) {
    CHECK(gradcheck_rel_error(gen_loss, p, 1e-6, coords(p)) < 1e-4);
  }
  for (auto& p : d->parameters()) {
    CHECK(gradcheck_rel_error(disc_loss, p, 1e-6, coords(p)) < 1e-4);
  }
  for (auto& p : e->parameters()) {
    CHECK(gradcheck_rel_error(ae_loss, p, 1e-6, coords(p)) < 1e-4);
  }
}

TEST_CASE("parameter hash tracks parameter bytes") {
  torch::manual_seed(13);
  Discriminator a(small_config());
  torch::manual_seed(13);
  Discriminator b(small_config());
  CHECK(parameter_hash(*a) == parameter_hash(*b));
  {
    torch::NoGradGuard no_grad;
    b->parameters()[0].view({-1})[0].add_(1e-3);
  }
  CHECK(parameter_hash(*a) != parameter_hash(*b));
}
