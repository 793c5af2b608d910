#include "segshift/checkpoint.hpp"

#include <algorithm>

#include "segshift/errors.hpp"
#include "segshift/seeds.hpp"

namespace segshift {
namespace {

void write_string(torch::serialize::OutputArchive& a, const std::string& key, const std::string& value) {
  a.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& a, const std::string& key) {
  c10::IValue v;
  a.read(key, v);
  return v.toStringRef();
}

std::int64_t read_int(torch::serialize::InputArchive& a, const std::string& key) {
  c10::IValue v;
  a.read(key, v);
  return v.toInt();
}

void check_format(torch::serialize::InputArchive& a, const std::string& expected, const std::filesystem::path& file) {
  std::string fmt;
  try {
    fmt = read_string(a, "format");
  } catch (const c10::Error&) {
    throw std::runtime_error(file.string() + " carries no format tag");
  }
  if (fmt != expected) {
    throw std::runtime_error(file.string() + " has format '" + fmt + "', expected '" + expected + "'");
  }
}

void load_archive(torch::serialize::InputArchive& a, const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) {
    throw std::runtime_error("checkpoint not found: " + file.string());
  }
  a.load_from(file.string());
}

}  // namespace

GanModels make_gan_models(const NetConfig& net, std::uint64_t seed) {
  GanModels m;
  torch::manual_seed(derive_seed(seed, "init-generator"));
  m.generator = LayeredGenerator(net);
  torch::manual_seed(derive_seed(seed, "init-discriminator"));
  m.discriminator = Discriminator(net);
  return m;
}

void save_gan_checkpoint(const std::filesystem::path& file, GanModels& models, torch::optim::Adam& opt_g,
                         torch::optim::Adam& opt_d, const TrainConfig& config, std::int64_t step) {
  torch::serialize::OutputArchive a;
  write_string(a, "format", kGanCheckpointFormat);
  write_string(a, "config", to_json(config).dump());
  a.write("step", c10::IValue(step));
  torch::serialize::OutputArchive gen;
  models.generator->save(gen);
  a.write("generator", gen);
  torch::serialize::OutputArchive disc;
  models.discriminator->save(disc);
  a.write("discriminator", disc);
  torch::serialize::OutputArchive og;
  opt_g.save(og);
  a.write("optimizer_generator", og);
  torch::serialize::OutputArchive od;
  opt_d.save(od);
  a.write("optimizer_discriminator", od);
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  // Write-then-rename so an interrupted save never leaves a truncated checkpoint.
  const auto tmp = file.string() + ".tmp";
  a.save_to(tmp);
  std::filesystem::rename(tmp, file);
}

GanCheckpoint load_gan_checkpoint(const std::filesystem::path& file, torch::optim::Adam* opt_g,
                                  torch::optim::Adam* opt_d) {
  torch::serialize::InputArchive a;
  load_archive(a, file);
  check_format(a, kGanCheckpointFormat, file);
  GanCheckpoint ck;
  ck.config = train_config_from_json(nlohmann::json::parse(read_string(a, "config")));
  ck.step = read_int(a, "step");
  ck.models = make_gan_models(ck.config.net, ck.config.seed);
  torch::serialize::InputArchive gen;
  a.read("generator", gen);
  ck.models.generator->load(gen);
  torch::serialize::InputArchive disc;
  a.read("discriminator", disc);
  ck.models.discriminator->load(disc);
  if (opt_g != nullptr) {
    torch::serialize::InputArchive og;
    a.read("optimizer_generator", og);
    opt_g->load(og);
  }
  if (opt_d != nullptr) {
    torch::serialize::InputArchive od;
    a.read("optimizer_discriminator", od);
    opt_d->load(od);
  }
  return ck;
}

void save_encoder_checkpoint(const std::filesystem::path& file, const EncoderCheckpoint& ckpt) {
  torch::serialize::OutputArchive a;
  write_string(a, "format", kEncoderCheckpointFormat);
  write_string(a, "net", to_json(ckpt.net).dump());
  a.write("chunk", c10::IValue(static_cast<std::int64_t>(ckpt.chunk)));
  a.write("begin", c10::IValue(ckpt.begin));
  a.write("end", c10::IValue(ckpt.end));
  a.write("code_count", c10::IValue(static_cast<std::int64_t>(ckpt.encoder->code_count())));
  torch::serialize::OutputArchive enc;
  ckpt.encoder->save(enc);
  a.write("encoder", enc);
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  a.save_to(file.string());
}

EncoderCheckpoint load_encoder_checkpoint(const std::filesystem::path& file) {
  torch::serialize::InputArchive a;
  load_archive(a, file);
  check_format(a, kEncoderCheckpointFormat, file);
  EncoderCheckpoint ck;
  ck.net = net_config_from_json(nlohmann::json::parse(read_string(a, "net")));
  ck.chunk = static_cast<int>(read_int(a, "chunk"));
  ck.begin = read_int(a, "begin");
  ck.end = read_int(a, "end");
  ck.encoder = Encoder(ck.net, static_cast<int>(read_int(a, "code_count")));
  torch::serialize::InputArchive enc;
  a.read("encoder", enc);
  ck.encoder->load(enc);
  return ck;
}

std::vector<EncoderCheckpoint> load_encoder_checkpoints(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("encoder checkpoint directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("encoder_chunk_", 0) == 0 && e.path().extension() == ".pt") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<EncoderCheckpoint> out;
  for (const auto& f : files) {
    out.push_back(load_encoder_checkpoint(f));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.chunk < b.chunk; });
  if (out.empty()) {
    throw std::runtime_error("no encoder checkpoints in " + dir.string());
  }
  return out;
}

}  // namespace segshift
