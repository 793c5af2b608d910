#include "segshift/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "segshift/compose.hpp"
#include "segshift/data.hpp"
#include "segshift/errors.hpp"
#include "segshift/losses.hpp"
#include "segshift/seeds.hpp"

namespace segshift {
namespace {

void set_requires_grad(torch::nn::Module& module, bool on) {
  for (auto& p : module.parameters()) {
    p.requires_grad_(on);
  }
}

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, const OptimizerConfig& o) {
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(o.learning_rate).betas(std::make_tuple(o.beta1, o.beta2)));
}

// Dumps the offending tensors and the loss terms next to the checkpoint, then throws.
[[noreturn]] void abort_non_finite(const GanState& state, const char* phase, std::vector<torch::Tensor> batch,
                                   const nlohmann::json& terms) {
  std::filesystem::create_directories(state.dump_dir);
  const auto stem = state.dump_dir / ("nonfinite_step_" + std::to_string(state.step + 1));
  for (auto& t : batch) {
    t = t.detach();
  }
  torch::save(batch, stem.string() + ".pt");
  std::ofstream(stem.string() + ".json") << terms.dump(2) << "\n";
  throw NonFiniteLossError(std::string("non-finite ") + phase + " loss at step " + std::to_string(state.step + 1) +
                               ": " + terms.dump(),
                           stem.string() + ".pt");
}

std::string chunk_stem(int chunk) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << chunk;
  return os.str();
}

}  // namespace

nlohmann::json StepMetrics::to_json() const {
  return {{"step", step},     {"d_loss", d_loss},       {"d_real", d_real}, {"d_fake", d_fake},
          {"gp", gp},         {"drift", drift},         {"g_loss", g_loss}, {"g_adv", g_adv},
          {"L_size", l_size}, {"L_binary", l_binary},   {"mean_mask", mean_mask}};
}

StepMetrics StepMetrics::from_json(const nlohmann::json& j) {
  StepMetrics m;
  m.step = j.at("step").get<std::int64_t>();
  m.d_loss = j.at("d_loss").get<double>();
  m.d_real = j.at("d_real").get<double>();
  m.d_fake = j.at("d_fake").get<double>();
  m.gp = j.at("gp").get<double>();
  m.drift = j.at("drift").get<double>();
  m.g_loss = j.at("g_loss").get<double>();
  m.g_adv = j.at("g_adv").get<double>();
  m.l_size = j.at("L_size").get<double>();
  m.l_binary = j.at("L_binary").get<double>();
  m.mean_mask = j.at("mean_mask").get<double>();
  return m;
}

GanState GanState::create(const TrainConfig& config) {
  config.validate();
  GanState st;
  st.config = config;
  st.models = make_gan_models(config.net, config.seed);
  st.opt_g = make_adam(st.models.generator->parameters(), config.optimizer);
  st.opt_d = make_adam(st.models.discriminator->parameters(), config.optimizer);
  return st;
}

GanState GanState::resume(const std::filesystem::path& checkpoint) {
  auto ck = load_gan_checkpoint(checkpoint);
  GanState st;
  st.config = ck.config;
  st.models = ck.models;
  st.opt_g = make_adam(st.models.generator->parameters(), st.config.optimizer);
  st.opt_d = make_adam(st.models.discriminator->parameters(), st.config.optimizer);
  // Second pass restores the optimizer moments into the optimizers bound to these parameters.
  torch::serialize::InputArchive a;
  a.load_from(checkpoint.string());
  torch::serialize::InputArchive og;
  a.read("optimizer_generator", og);
  st.opt_g->load(og);
  torch::serialize::InputArchive od;
  a.read("optimizer_discriminator", od);
  st.opt_d->load(od);
  st.step = ck.step;
  return st;
}

void GanState::save(const std::filesystem::path& checkpoint) {
  save_gan_checkpoint(checkpoint, models, *opt_g, *opt_d, config, step);
}

torch::Tensor perturbed_composites(const LayeredScene& scene, const TrainConfig& config, Rng& rng) {
  LayeredScene s = scene;
  if (config.contrast_jitter) {
    s.background = jitter_contrast(s.background, *config.contrast_jitter, rng);
  }
  const auto shifts = sample_shifts(static_cast<std::size_t>(s.background.size(0)), config.delta, rng);
  return compose_shifted(s, shifts, config.delta);
}

void discriminator_update(GanState& state, const torch::Tensor& real_batch, std::uint64_t stream, StepMetrics& m) {
  const auto& cfg = state.config;
  auto& gen = state.models.generator;
  auto& disc = state.models.discriminator;
  const int64_t n = real_batch.size(0);
  const Critic critic = [&disc](const torch::Tensor& x) { return disc->forward(x); };
  set_requires_grad(*disc, true);
  set_requires_grad(*gen, false);
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    auto latent_rng = make_rng(cfg.seed, "latent-d", stream);
    const auto scene = gen->forward(sample_latent(n, cfg.net.latent_dim, latent_rng));
    auto perturb_rng = make_rng(cfg.seed, "perturb-d", stream);
    fake = perturbed_composites(scene, cfg, perturb_rng);
  }
  auto zeta_rng = make_rng(cfg.seed, "zeta", stream);
  const auto penalty = gradient_penalty(critic, real_batch, fake, zeta_rng);
  const auto scores = disc->forward(torch::cat({real_batch, fake}, 0));
  const auto terms = discriminator_loss(scores.narrow(0, 0, n), scores.narrow(0, n, n), penalty, cfg.weights);
  m.d_loss = terms.total.item<double>();
  m.d_real = terms.real_mean.item<double>();
  m.d_fake = terms.fake_mean.item<double>();
  m.gp = terms.penalty.item<double>();
  m.drift = terms.drift.item<double>();
  set_requires_grad(*gen, true);
  if (!std::isfinite(m.d_loss)) {
    abort_non_finite(state, "discriminator", {real_batch, fake}, m.to_json());
  }
  state.opt_d->zero_grad();
  terms.total.backward();
  state.opt_d->step();
}

void generator_update(GanState& state, int64_t batch_size, std::uint64_t stream, StepMetrics& m) {
  const auto& cfg = state.config;
  auto& gen = state.models.generator;
  auto& disc = state.models.discriminator;
  set_requires_grad(*disc, false);
  auto latent_rng = make_rng(cfg.seed, "latent-g", stream);
  const auto scene = gen->forward(sample_latent(batch_size, cfg.net.latent_dim, latent_rng));
  auto perturb_rng = make_rng(cfg.seed, "perturb-g", stream);
  const auto fake = perturbed_composites(scene, cfg, perturb_rng);
  const auto g = generator_loss(disc->forward(fake), scene.mask, cfg.weights);
  m.g_loss = g.total.item<double>();
  m.g_adv = g.adversarial.item<double>();
  m.l_size = g.size.item<double>();
  m.l_binary = g.binary.item<double>();
  m.mean_mask = scene.mask.mean().item<double>();
  set_requires_grad(*disc, true);
  if (!std::isfinite(m.g_loss)) {
    abort_non_finite(state, "generator", {fake, scene.mask}, m.to_json());
  }
  state.opt_g->zero_grad();
  g.total.backward();
  state.opt_g->step();
}

StepMetrics gan_train_step(GanState& state, const torch::Tensor& real_batch) {
  const int64_t n = real_batch.size(0);
  if (real_batch.dim() != 4 || n < 2) {
    throw std::invalid_argument("gan_train_step needs a batch of at least two real images");
  }
  const auto step = static_cast<std::uint64_t>(state.step);
  const auto d_steps = static_cast<std::uint64_t>(state.config.d_steps_per_g_step);
  StepMetrics m;
  m.step = state.step + 1;
  for (std::uint64_t k = 0; k < d_steps; ++k) {
    discriminator_update(state, real_batch, step * d_steps + k, m);
  }
  generator_update(state, n, step, m);
  ++state.step;
  return m;
}

RealBatchSampler::RealBatchSampler(const torch::Tensor& images, const TrainConfig& config) : config_(config) {
  if (!images.defined() || images.dim() != 4 || images.size(0) == 0) {
    throw std::invalid_argument("training dataset is empty");
  }
  const int r = config.resolution();
  source_ = resize_square(images, config.random_crop ? crop_source_size(r) : r).contiguous();
}

torch::Tensor RealBatchSampler::batch(std::int64_t step) const {
  auto rng = make_rng(config_.seed, "real-batch", static_cast<std::uint64_t>(step));
  const int r = config_.resolution();
  const int slack = static_cast<int>(source_.size(2)) - r;
  std::uniform_int_distribution<int64_t> pick(0, source_.size(0) - 1);
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(config_.batch_size));
  for (int i = 0; i < config_.batch_size; ++i) {
    const auto img = source_[pick(rng)];
    out.push_back(slack > 0 ? crop(img, r, sample_crop_offset(slack, rng)) : img);
  }
  return torch::stack(out);
}

std::vector<StepMetrics> read_metrics(const std::filesystem::path& file) {
  std::vector<StepMetrics> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      out.push_back(StepMetrics::from_json(nlohmann::json::parse(line)));
    }
  }
  return out;
}

TrainResult train_gan(const TrainConfig& config, const torch::Tensor& images, const std::filesystem::path& out_dir,
                      const TrainOptions& options) {
  config.validate();
  if (!images.defined() || images.size(0) == 0) {
    throw std::invalid_argument("training dataset is empty");
  }
  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.checkpoint = out_dir / kGanCheckpointName;
  result.metrics = out_dir / kMetricsName;

  GanState state;
  if (options.resume && std::filesystem::exists(result.checkpoint)) {
    state = GanState::resume(result.checkpoint);
    if (!(state.config == config)) {
      throw ConfigError("resume config differs from the checkpoint's config snapshot");
    }
    // Drop metrics logged after the last checkpoint; they will be replayed.
    auto kept = read_metrics(result.metrics);
    std::ofstream rewrite(result.metrics, std::ios::trunc);
    for (const auto& m : kept) {
      if (m.step <= state.step) {
        rewrite << m.to_json().dump() << "\n";
      }
    }
  } else {
    state = GanState::create(config);
    std::ofstream(result.metrics, std::ios::trunc);
  }
  state.dump_dir = out_dir;

  const RealBatchSampler sampler(images, config);
  std::ofstream log(result.metrics, std::ios::app);
  const auto total = config.total_steps();
  while (state.step < total) {
    const auto m = gan_train_step(state, sampler.batch(state.step));
    result.last = m;
    if (m.step % config.log_every == 0 || m.step == total) {
      log << m.to_json().dump() << "\n" << std::flush;
    }
    if (options.progress_every > 0 && m.step % options.progress_every == 0) {
      std::cerr << "step " << m.step << "/" << total << "  d_loss " << m.d_loss << "  g_loss " << m.g_loss
                << "  mean_mask " << m.mean_mask << "  L_binary " << m.l_binary << "\n";
    }
    if (options.on_step) {
      options.on_step(m);
    }
    const bool stop = options.stop_after_step > 0 && state.step >= options.stop_after_step;
    if (stop || (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0)) {
      state.save(result.checkpoint);
    }
    if (stop) {
      break;
    }
  }
  state.save(result.checkpoint);
  result.steps = state.step;
  return result;
}

void freeze(torch::nn::Module& module) {
  set_requires_grad(module, false);
  module.eval();
}

torch::Tensor reconstruct(LayeredGenerator& generator, const torch::Tensor& codes) {
  return compose(generator->forward_codes(codes));
}

ChunkResult train_encoder_chunk(const EncoderTrainConfig& config, GanModels& frozen, const torch::Tensor& images,
                                int chunk, Encoder* trained) {
  config.validate();
  auto& gen = frozen.generator;
  auto& disc = frozen.discriminator;
  (void)disc->feature_shape();  // ConfigError without a feature tap
  const int64_t n = images.size(0);
  if (n == 0) {
    throw std::invalid_argument("encoder chunk is empty");
  }
  torch::manual_seed(derive_seed(config.seed, "encoder-init", static_cast<std::uint64_t>(chunk)));
  Encoder enc(gen->config(), config.code_count);
  auto opt = make_adam(enc->parameters(), config.optimizer);
  const FeatureMap features = [&disc](const torch::Tensor& x) { return disc->features(x); };
  auto loss_on = [&](const torch::Tensor& x) {
    return autoencoder_loss(x, reconstruct(gen, enc->forward(x)), features, config.l1_weight,
                            config.perceptual_weight);
  };
  auto full_loss = [&] {
    torch::NoGradGuard no_grad;
    return loss_on(images).total.item<double>();
  };

  ChunkResult r;
  r.chunk = chunk;
  r.initial_loss = full_loss();
  const int64_t bs = (config.batch_size == 0 || config.batch_size >= n) ? n : config.batch_size;
  auto batch_rng = make_rng(config.seed, "encoder-batch", static_cast<std::uint64_t>(chunk));
  std::vector<int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  r.curve.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    torch::Tensor batch = images;
    if (bs < n) {
      std::shuffle(order.begin(), order.end(), batch_rng);
      batch = images.index_select(0, torch::tensor(std::vector<int64_t>(order.begin(), order.begin() + bs)));
    }
    const auto loss = loss_on(batch);
    const double v = loss.total.item<double>();
    if (!std::isfinite(v)) {
      throw NonFiniteLossError("non-finite encoder loss in chunk " + std::to_string(chunk) + " at iteration " +
                                   std::to_string(it),
                               "");
    }
    r.curve.push_back(v);
    opt->zero_grad();
    loss.total.backward();
    opt->step();
  }
  r.final_loss = full_loss();
  if (trained != nullptr) {
    *trained = enc;
  }
  return r;
}

std::vector<ChunkResult> train_encoder(const EncoderTrainConfig& config, GanModels& frozen,
                                       const torch::Tensor& images, const std::filesystem::path& out_dir,
                                       int max_chunks) {
  config.validate();
  (void)frozen.discriminator->feature_shape();
  if (!images.defined() || images.size(0) == 0) {
    throw std::invalid_argument("no images to encode");
  }
  freeze(*frozen.generator);
  freeze(*frozen.discriminator);
  const auto gen_hash = parameter_hash(*frozen.generator);
  const auto disc_hash = parameter_hash(*frozen.discriminator);
  std::filesystem::create_directories(out_dir);

  std::vector<ChunkResult> results;
  const int64_t n = images.size(0);
  int chunk = 0;
  for (int64_t begin = 0; begin < n; begin += config.chunk_size, ++chunk) {
    if (max_chunks > 0 && chunk >= max_chunks) {
      break;
    }
    const int64_t end = std::min<int64_t>(n, begin + config.chunk_size);
    Encoder enc{nullptr};
    auto r = train_encoder_chunk(config, frozen, images.slice(0, begin, end), chunk, &enc);
    r.begin = begin;
    r.end = end;
    r.checkpoint = out_dir / ("encoder_chunk_" + chunk_stem(chunk) + ".pt");
    EncoderCheckpoint ck;
    ck.encoder = enc;
    ck.net = frozen.generator->config();
    ck.chunk = chunk;
    ck.begin = begin;
    ck.end = end;
    save_encoder_checkpoint(r.checkpoint, ck);
    std::ofstream curve(out_dir / ("loss_curve_chunk_" + chunk_stem(chunk) + ".csv"));
    curve << "iteration,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      curve << i << "," << r.curve[i] << "\n";
    }
    results.push_back(std::move(r));
  }
  if (parameter_hash(*frozen.generator) != gen_hash || parameter_hash(*frozen.discriminator) != disc_hash) {
    throw std::logic_error("frozen generator or critic parameters changed during encoder training");
  }
  return results;
}

}  // namespace segshift
