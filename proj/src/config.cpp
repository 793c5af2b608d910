#include "segshift/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "segshift/errors.hpp"
#include "segshift/seeds.hpp"

namespace segshift {
namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError("missing config field '" + where + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + key + "': " + e.what());
  }
}

const json& section(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_object()) {
    throw ConfigError("missing config section '" + where + key + "'");
  }
  return j.at(key);
}

// Rejects keys in `j` that do not appear in `reference`, recursively.
void reject_unknown(const json& j, const json& reference, const std::string& where) {
  if (!j.is_object() || !reference.is_object()) {
    return;
  }
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key)) {
      throw ConfigError("unknown config field '" + where + key + "'");
    }
    reject_unknown(value, reference.at(key), where + key + ".");
  }
}

// Objects merge key by key; any other value (null included) replaces the target.
void deep_merge(json& target, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && target.contains(key) && target.at(key).is_object()) {
      deep_merge(target.at(key), value);
    } else {
      target[key] = value;
    }
  }
}

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    }
  } else {
    out[prefix] = j;
  }
}

NetConfig net_from_json(const json& j, const std::string& w) {
  reject_unknown(j, to_json(NetConfig{}), w);
  NetConfig c;
  c.resolution = field<int>(j, "resolution", w);
  c.latent_dim = field<int>(j, "latent_dim", w);
  c.gen_channels = field<int>(j, "gen_channels", w);
  c.disc_channels = field<int>(j, "disc_channels", w);
  c.max_channels = field<int>(j, "max_channels", w);
  c.min_channels = field<int>(j, "min_channels", w);
  c.feature_tap = field<int>(j, "feature_tap", w);
  c.single_generator = field<bool>(j, "single_generator", w);
  return c;
}

LossWeights weights_from_json(const json& j, const std::string& w) {
  LossWeights l;
  l.gamma1 = field<double>(j, "gamma1", w);
  l.gamma2 = field<double>(j, "gamma2", w);
  l.lambda_gp = field<double>(j, "lambda_gp", w);
  l.epsilon_drift = field<double>(j, "epsilon_drift", w);
  l.eta = field<double>(j, "eta", w);
  return l;
}

OptimizerConfig optimizer_from_json(const json& j, const std::string& w) {
  OptimizerConfig o;
  o.learning_rate = field<double>(j, "learning_rate", w);
  o.beta1 = field<double>(j, "beta1", w);
  o.beta2 = field<double>(j, "beta2", w);
  return o;
}

EvalConfig eval_from_json(const json& j, const std::string& w) {
  EvalConfig e;
  e.eval_images = field<int>(j, "eval_images", w);
  e.threshold = field<double>(j, "threshold", w);
  e.mask_samples = field<int>(j, "mask_samples", w);
  e.montage_rows = field<int>(j, "montage_rows", w);
  e.montage_cols = field<int>(j, "montage_cols", w);
  return e;
}

ExperimentConfig desk_default() {
  ExperimentConfig c;
  c.name = "default";
  c.seed = 1;
  c.dataset_size = 2000;
  c.synth.resolution = 32;
  c.gan.net.resolution = 32;
  c.gan.net.latent_dim = 64;
  c.gan.delta = 4;
  c.gan.weights = LossWeights{};
  c.gan.contrast_jitter = std::make_pair(0.7, 1.3);
  c.fan_out_seeds();
  return c;
}

ExperimentConfig paper_car_64() {
  ExperimentConfig c = desk_default();
  c.name = "paper-car-64";
  c.synth.resolution = 64;
  c.synth.position_jitter = 12;
  c.gan.net.resolution = 64;
  c.gan.net.latent_dim = 512;
  c.gan.net.gen_channels = 256;
  c.gan.net.max_channels = 256;
  c.gan.delta = 8;
  c.gan.weights = LossWeights{2.0, 2.0, 10.0, 0.001, 0.25};
  c.gan.optimizer = OptimizerConfig{0.001, 0.0, 0.99};
  c.gan.total_real_images = 1200000;
  c.gan.contrast_jitter.reset();
  c.encoder.chunk_size = 100;
  c.encoder.iterations = 1000;
  c.encoder.optimizer = OptimizerConfig{1e-4, 0.9, 0.999};
  c.fan_out_seeds();
  return c;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
}

void TrainConfig::validate() const {
  net.validate();
  weights.validate();
  optimizer.validate();
  if (batch_size < 2) {
    throw ConfigError("batch_size must be >= 2");
  }
  if (delta < 0 || 2 * delta >= net.resolution) {
    throw ConfigError("delta must satisfy 0 <= delta < resolution / 2");
  }
  if (total_real_images < 1) {
    throw ConfigError("total_real_images must be >= 1");
  }
  if (contrast_jitter) {
    const auto [lo, hi] = *contrast_jitter;
    if (!(lo > 0.0 && lo <= hi && std::isfinite(hi))) {
      throw ConfigError("contrast_jitter must satisfy 0 < lo <= hi");
    }
  }
  if (d_steps_per_g_step < 1 || checkpoint_every < 0 || log_every < 1) {
    throw ConfigError("d_steps_per_g_step and log_every must be >= 1, checkpoint_every >= 0");
  }
}

std::int64_t TrainConfig::total_steps() const { return (total_real_images + batch_size - 1) / batch_size; }

void EncoderTrainConfig::validate() const {
  optimizer.validate();
  if (chunk_size < 1 || iterations < 1 || batch_size < 0 || code_count < 1) {
    throw ConfigError("encoder chunk_size, iterations and code_count must be >= 1");
  }
  if (l1_weight < 0.0 || perceptual_weight < 0.0) {
    throw ConfigError("autoencoder loss weights must be non-negative");
  }
}

void EvalConfig::validate() const {
  if (eval_images < 1 || mask_samples < 1 || montage_rows < 1 || montage_cols < 1) {
    throw ConfigError("eval counts must be >= 1");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [0, 1]");
  }
}

void ExperimentConfig::validate() const {
  synth.validate();
  gan.validate();
  encoder.validate();
  eval.validate();
  if (dataset_size < 1) {
    throw ConfigError("dataset_size must be >= 1");
  }
  if (synth.resolution != gan.net.resolution) {
    throw ConfigError("synthetic resolution must match the network resolution");
  }
}

void ExperimentConfig::fan_out_seeds() {
  synth.seed = derive_seed(seed, "data");
  gan.seed = derive_seed(seed, "gan");
  encoder.seed = derive_seed(seed, "encoder");
}

json to_json(const SynthParams& p) {
  std::vector<std::string> kinds;
  for (auto k : p.object_kinds) {
    kinds.push_back(to_string(k));
  }
  return {{"resolution", p.resolution},
          {"object_kinds", kinds},
          {"scale_min", p.scale_min},
          {"scale_max", p.scale_max},
          {"foreground_texture", to_string(p.foreground_texture)},
          {"background_texture", to_string(p.background_texture)},
          {"position_jitter", p.position_jitter},
          {"seed", p.seed}};
}

json to_json(const NetConfig& c) {
  return {{"resolution", c.resolution},       {"latent_dim", c.latent_dim},     {"gen_channels", c.gen_channels},
          {"disc_channels", c.disc_channels}, {"max_channels", c.max_channels}, {"min_channels", c.min_channels},
          {"feature_tap", c.feature_tap},     {"single_generator", c.single_generator}};
}

json to_json(const LossWeights& w) {
  return {{"gamma1", w.gamma1},
          {"gamma2", w.gamma2},
          {"lambda_gp", w.lambda_gp},
          {"epsilon_drift", w.epsilon_drift},
          {"eta", w.eta}};
}

json to_json(const OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"beta1", o.beta1}, {"beta2", o.beta2}};
}

json to_json(const TrainConfig& c) {
  json jitter = nullptr;
  if (c.contrast_jitter) {
    jitter = json::array({c.contrast_jitter->first, c.contrast_jitter->second});
  }
  return {{"net", to_json(c.net)},
          {"batch_size", c.batch_size},
          {"delta", c.delta},
          {"weights", to_json(c.weights)},
          {"optimizer", to_json(c.optimizer)},
          {"total_real_images", c.total_real_images},
          {"contrast_jitter", jitter},
          {"random_crop", c.random_crop},
          {"d_steps_per_g_step", c.d_steps_per_g_step},
          {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every},
          {"seed", c.seed}};
}

json to_json(const EncoderTrainConfig& c) {
  return {{"chunk_size", c.chunk_size},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"optimizer", to_json(c.optimizer)},
          {"code_count", c.code_count},
          {"l1_weight", c.l1_weight},
          {"perceptual_weight", c.perceptual_weight},
          {"seed", c.seed}};
}

json to_json(const EvalConfig& c) {
  return {{"eval_images", c.eval_images},
          {"threshold", c.threshold},
          {"mask_samples", c.mask_samples},
          {"montage_rows", c.montage_rows},
          {"montage_cols", c.montage_cols}};
}

json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"seed", c.seed},
          {"synth", to_json(c.synth)},
          {"dataset_size", c.dataset_size},
          {"gan", to_json(c.gan)},
          {"encoder", to_json(c.encoder)},
          {"eval", to_json(c.eval)}};
}

NetConfig net_config_from_json(const json& j) { return net_from_json(j, "net."); }

SynthParams synth_params_from_json(const json& j) {
  const std::string w = "synth.";
  SynthParams p;
  p.resolution = field<int>(j, "resolution", w);
  p.object_kinds.clear();
  for (const auto& k : field<std::vector<std::string>>(j, "object_kinds", w)) {
    p.object_kinds.push_back(parse_object_kind(k));
  }
  p.scale_min = field<double>(j, "scale_min", w);
  p.scale_max = field<double>(j, "scale_max", w);
  p.foreground_texture = parse_texture(field<std::string>(j, "foreground_texture", w));
  p.background_texture = parse_texture(field<std::string>(j, "background_texture", w));
  p.position_jitter = field<int>(j, "position_jitter", w);
  p.seed = field<std::uint64_t>(j, "seed", w);
  return p;
}

TrainConfig train_config_from_json(const json& j) {
  const std::string w = "gan.";
  TrainConfig c;
  c.net = net_from_json(section(j, "net", w), w + "net.");
  c.batch_size = field<int>(j, "batch_size", w);
  c.delta = field<int>(j, "delta", w);
  c.weights = weights_from_json(section(j, "weights", w), w + "weights.");
  c.optimizer = optimizer_from_json(section(j, "optimizer", w), w + "optimizer.");
  c.total_real_images = field<std::int64_t>(j, "total_real_images", w);
  if (!j.contains("contrast_jitter")) {
    throw ConfigError("missing config field 'gan.contrast_jitter'");
  }
  if (!j.at("contrast_jitter").is_null()) {
    const auto r = field<std::vector<double>>(j, "contrast_jitter", w);
    if (r.size() != 2) {
      throw ConfigError("gan.contrast_jitter must be null or [lo, hi]");
    }
    c.contrast_jitter = std::make_pair(r[0], r[1]);
  }
  c.random_crop = field<bool>(j, "random_crop", w);
  c.d_steps_per_g_step = field<int>(j, "d_steps_per_g_step", w);
  c.checkpoint_every = field<std::int64_t>(j, "checkpoint_every", w);
  c.log_every = field<std::int64_t>(j, "log_every", w);
  c.seed = field<std::uint64_t>(j, "seed", w);
  return c;
}

EncoderTrainConfig encoder_config_from_json(const json& j) {
  const std::string w = "encoder.";
  EncoderTrainConfig c;
  c.chunk_size = field<int>(j, "chunk_size", w);
  c.iterations = field<int>(j, "iterations", w);
  c.batch_size = field<int>(j, "batch_size", w);
  c.optimizer = optimizer_from_json(section(j, "optimizer", w), w + "optimizer.");
  c.code_count = field<int>(j, "code_count", w);
  c.l1_weight = field<double>(j, "l1_weight", w);
  c.perceptual_weight = field<double>(j, "perceptual_weight", w);
  c.seed = field<std::uint64_t>(j, "seed", w);
  return c;
}

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j, to_json(ExperimentConfig{}), "");
  ExperimentConfig c;
  c.name = field<std::string>(j, "name", "");
  c.seed = field<std::uint64_t>(j, "seed", "");
  c.synth = synth_params_from_json(section(j, "synth", ""));
  c.dataset_size = field<int>(j, "dataset_size", "");
  c.gan = train_config_from_json(section(j, "gan", ""));
  c.encoder = encoder_config_from_json(section(j, "encoder", ""));
  c.eval = eval_from_json(section(j, "eval", ""), "eval.");
  return c;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names{"default", "paper-car-64"};
  for (char s = 'a'; s <= 'h'; ++s) {
    names.push_back(std::string("ablation-") + s);
  }
  return names;
}

ExperimentConfig preset(const std::string& name) {
  if (name == "default") {
    return desk_default();
  }
  if (name == "paper-car-64") {
    return paper_car_64();
  }
  if (name.size() == 10 && name.rfind("ablation-", 0) == 0 && is_ablation_setting(name[9])) {
    auto c = ablation_config(name[9], desk_default());
    c.name = name;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  json overrides = j;
  std::string base = "default";
  if (overrides.contains("preset")) {
    base = overrides.at("preset").get<std::string>();
    overrides.erase("preset");
  }
  auto base_cfg = preset(base);
  // A master seed override re-derives the stage seeds; explicit stage seeds still win below.
  if (overrides.contains("seed") && overrides.at("seed").is_number_integer() &&
      (overrides.at("seed").is_number_unsigned() || overrides.at("seed").get<std::int64_t>() >= 0)) {
    base_cfg.seed = overrides.at("seed").get<std::uint64_t>();
    base_cfg.fan_out_seeds();
  }
  json merged = to_json(base_cfg);
  reject_unknown(overrides, merged, "");
  deep_merge(merged, overrides);
  auto cfg = experiment_from_json(merged);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open config file " + file.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

void save_config(const std::filesystem::path& file, const ExperimentConfig& cfg) {
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  std::ofstream out(file);
  if (!out) {
    throw std::runtime_error("cannot write " + file.string());
  }
  out << to_json(cfg).dump(2) << "\n";
}

bool is_ablation_setting(char setting) { return setting >= 'a' && setting <= 'h'; }

std::string ablation_label(char setting) {
  switch (setting) {
    case 'a': return "default parameters";
    case 'b': return "no shift delta=0";
    case 'c': return "25% shift delta=0.25*size";
    case 'd': return "bg contrast jitter=(0.7,1.3)";
    case 'e': return "no random crops";
    case 'f': return "mask size gamma1=10";
    case 'g': return "min mask size eta=5%";
    case 'h': return "single generator";
    default: throw ConfigError(std::string("unknown ablation setting '") + setting + "'");
  }
}

ExperimentConfig ablation_config(char setting, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  switch (setting) {
    case 'a': break;
    case 'b': c.gan.delta = 0; break;
    case 'c': c.gan.delta = static_cast<int>(std::lround(0.25 * c.gan.net.resolution)); break;
    case 'd': c.gan.contrast_jitter = std::make_pair(0.7, 1.3); break;
    case 'e': c.gan.random_crop = false; break;
    case 'f': c.gan.weights.gamma1 = 10.0; break;
    case 'g': c.gan.weights.eta = 0.05; break;
    case 'h': c.gan.net.single_generator = true; break;
    default: throw ConfigError(std::string("unknown ablation setting '") + setting + "'");
  }
  return c;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::map<std::string, json> fa;
  std::map<std::string, json> fb;
  flatten(to_json(a), "", fa);
  flatten(to_json(b), "", fb);
  std::set<std::string> keys;
  for (const auto& [k, v] : fa) keys.insert(k);
  for (const auto& [k, v] : fb) keys.insert(k);
  std::vector<std::string> out;
  for (const auto& k : keys) {
    if (!fa.count(k) || !fb.count(k) || fa[k] != fb[k]) {
      out.push_back(k);
    }
  }
  return out;
}

}  // namespace segshift
