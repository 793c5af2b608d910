#include "segshift/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "segshift/checkpoint.hpp"
#include "segshift/config.hpp"
#include "segshift/data.hpp"
#include "segshift/errors.hpp"
#include "segshift/eval.hpp"
#include "segshift/train.hpp"

#ifndef SEGSHIFT_CODE_HASH
#define SEGSHIFT_CODE_HASH "unknown"
#endif

namespace segshift::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Invocation {
  std::string command;
  ExperimentConfig config;
  json args = json::object();
  fs::path out_dir;
};

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string rel(const fs::path& p, const fs::path& base) {
  return fs::relative(p, base).generic_string();
}

fs::path arg_path(const Invocation& inv, const char* key) {
  if (!inv.args.contains(key) || inv.args.at(key).is_null()) {
    throw UsageError(std::string("--") + key + " is required for " + inv.command);
  }
  return inv.args.at(key).get<std::string>();
}

std::vector<char> parse_settings(const std::string& list) {
  std::vector<char> out;
  std::string item;
  std::istringstream in(list);
  while (std::getline(in, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.size() != 1 || !is_ablation_setting(item[0])) {
      throw UsageError("unknown ablation setting '" + item + "' (expected letters a..h)");
    }
    if (std::find(out.begin(), out.end(), item[0]) == out.end()) {
      out.push_back(item[0]);
    }
  }
  if (out.empty()) {
    throw UsageError("--settings is empty");
  }
  return out;
}

ImageDataset dataset_or_synth(const Invocation& inv, json& outputs) {
  const auto& cfg = inv.config;
  fs::path dir;
  if (inv.args.contains("dataset") && !inv.args.at("dataset").is_null()) {
    dir = inv.args.at("dataset").get<std::string>();
  } else {
    dir = inv.out_dir / "data";
    std::cerr << "synthesizing " << cfg.dataset_size << " images into " << dir << "\n";
    build_synth_dataset(cfg.dataset_size, cfg.synth, dir);
    outputs.push_back(rel(dir / kManifestName, inv.out_dir));
  }
  return load_dataset(dir, cfg.gan.resolution());
}

json execute(const Invocation& inv) {
  const auto& cfg = inv.config;
  const auto& out = inv.out_dir;
  json outputs = json::array();
  if (inv.command == "synth") {
    build_synth_dataset(cfg.dataset_size, cfg.synth, out);
    outputs.push_back(kManifestName);
    outputs.push_back(kSynthParamsName);
  } else if (inv.command == "train-gan") {
    const auto data = load_dataset(arg_path(inv, "dataset"), cfg.gan.resolution());
    TrainOptions opts;
    opts.resume = inv.args.value("resume", false);
    opts.progress_every = 500;
    const auto r = train_gan(cfg.gan, data.images, out, opts);
    outputs.push_back(rel(r.checkpoint, out));
    outputs.push_back(rel(r.metrics, out));
  } else if (inv.command == "train-encoder") {
    auto ck = load_gan_checkpoint(arg_path(inv, "gan_checkpoint"));
    const auto data = load_dataset(arg_path(inv, "dataset"), ck.config.resolution(),
                                   static_cast<std::size_t>(cfg.eval.eval_images));
    const auto chunks = train_encoder(cfg.encoder, ck.models, data.images, out);
    for (const auto& c : chunks) {
      outputs.push_back(rel(c.checkpoint, out));
      std::cerr << "chunk " << c.chunk << ": loss " << c.initial_loss << " -> " << c.final_loss << "\n";
    }
  } else if (inv.command == "evaluate") {
    auto ck = load_gan_checkpoint(arg_path(inv, "gan_checkpoint"));
    auto encoders = load_encoder_checkpoints(arg_path(inv, "encoder_dir"));
    const auto data = load_dataset(arg_path(inv, "dataset"), ck.config.resolution(),
                                   static_cast<std::size_t>(cfg.eval.eval_images));
    const auto seg = segment_images(ck.models.generator, encoders, data.images, cfg.eval.threshold);
    emit_figures(out, data.images, seg, cfg.eval, data.names);
    outputs.push_back("figures");
    outputs.push_back("masks");
    if (data.masks) {
      emit_report({score_masks(seg.masks, *data.masks, cfg.name)}, out);
      outputs.push_back(kReportTableName);
      outputs.push_back("report.json");
    } else {
      std::cerr << "notice: dataset has no ground truth masks; mIoU omitted\n";
    }
  } else if (inv.command == "run") {
    const auto data = dataset_or_synth(inv, outputs);
    const auto r = run_experiment(cfg, data, out, cfg.name, inv.args.value("resume", false));
    for (const char* f : {"gan/gan_checkpoint.pt", "gan/metrics.jsonl", "encoder", "summary.json", "figures"}) {
      outputs.push_back(f);
    }
    if (r.report) {
      outputs.push_back(kReportTableName);
    }
  } else if (inv.command == "ablate") {
    const auto settings = parse_settings(inv.args.at("settings").get<std::string>());
    const auto data = dataset_or_synth(inv, outputs);
    std::vector<SegmentationReport> reports;
    for (char s : settings) {
      auto r = run_ablation(s, cfg, data, out, inv.args.value("resume", false));
      outputs.push_back(std::string(1, s));
      if (r.report) {
        reports.push_back(*r.report);
      }
    }
    if (!reports.empty()) {
      emit_report(reports, out);
      outputs.push_back(kReportTableName);
    }
  } else {
    throw UsageError("unknown command " + inv.command);
  }
  return outputs;
}

void write_manifest_file(const fs::path& file, const json& m) {
  const auto tmp = file.string() + ".tmp";
  std::ofstream(tmp) << m.dump(2) << "\n";
  fs::rename(tmp, file);
}

int execute_with_manifest(Invocation inv, const json& extra) {
  inv.config.validate();
  if (inv.command == "ablate") {
    parse_settings(inv.args.at("settings").get<std::string>());
  }
  fs::create_directories(inv.out_dir);
  inv.out_dir = fs::absolute(inv.out_dir);
  torch::set_num_threads(1);
  json manifest = {{"command", inv.command},
                   {"args", inv.args},
                   {"config", to_json(inv.config)},
                   {"seed", inv.config.seed},
                   {"code_hash", code_hash()},
                   {"out_dir", inv.out_dir.string()},
                   {"outputs", json::array()},
                   {"started_at", now_utc()},
                   {"finished_at", nullptr},
                   {"status", "running"}};
  manifest.update(extra);
  const auto file = inv.out_dir / kRunManifestName;
  write_manifest_file(file, manifest);
  try {
    manifest["outputs"] = execute(inv);
    manifest["status"] = "ok";
    manifest["finished_at"] = now_utc();
    write_manifest_file(file, manifest);
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    manifest["finished_at"] = now_utc();
    write_manifest_file(file, manifest);
    throw;
  }
  std::cout << inv.out_dir.string() << "\n";
  return kExitOk;
}

fs::path absolute_or_null(const std::string& p) {
  return p.empty() ? fs::path() : fs::absolute(p);
}

void put_path(json& args, const char* key, const std::string& value) {
  args[key] = value.empty() ? json(nullptr) : json(absolute_or_null(value).string());
}

}  // namespace

std::string code_hash() {
  return SEGSHIFT_CODE_HASH;
}

fs::path resolve_out_dir(const std::string& out_dir, const std::string& command, const std::string& name) {
  const char* env = std::getenv(kOutRootEnv);
  const fs::path root = (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("runs");
  if (out_dir.empty()) {
    return root / (command + "-" + name);
  }
  const fs::path p(out_dir);
  if (p.is_relative() && env != nullptr && *env != '\0') {
    return root / p;
  }
  return p;
}

json read_run_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot open run manifest " + file.string());
  }
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("run manifest " + file.string() + " is not valid JSON: " + e.what());
  }
  for (const char* key : {"command", "args", "config"}) {
    if (!m.contains(key)) {
      throw ConfigError("run manifest " + file.string() + " lacks '" + key + "'");
    }
  }
  return m;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Unsupervised object segmentation with a shift-perturbed layered GAN"};
  app.name("segshift");
  app.require_subcommand(1);

  std::string config_file;
  std::string preset_name;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string dataset;
  std::string gan_checkpoint;
  std::string encoder_dir;
  std::string settings;
  std::string manifest_file;
  bool resume = false;
  std::vector<CLI::Option*> seed_opts;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config (may name a preset and override fields)")
        ->check(CLI::ExistingFile);
    sub->add_option("--preset", preset_name, "Named preset: default, paper-car-64, ablation-a..h");
    seed_opts.push_back(sub->add_option("--seed", seed, "Master seed override"));
    sub->add_option("--out-dir", out_dir, "Output directory");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic shapes dataset");
  add_config(synth);
  auto* train_gan_cmd = app.add_subcommand("train-gan", "Train the layered generator and critic");
  add_config(train_gan_cmd);
  train_gan_cmd->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_gan_cmd->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");
  auto* train_enc = app.add_subcommand("train-encoder", "Train per-chunk encoders against a frozen generator");
  add_config(train_enc);
  train_enc->add_option("--gan-checkpoint", gan_checkpoint)->required()->check(CLI::ExistingFile);
  train_enc->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  auto* evaluate = app.add_subcommand("evaluate", "Segment a dataset and write masks, montages and mIoU");
  add_config(evaluate);
  evaluate->add_option("--encoder-dir", encoder_dir)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--gan-checkpoint", gan_checkpoint)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  auto* run_cmd = app.add_subcommand("run", "Synthesize (unless --dataset), train, segment and report");
  add_config(run_cmd);
  run_cmd->add_option("--dataset", dataset)->check(CLI::ExistingDirectory);
  run_cmd->add_flag("--resume", resume);
  auto* ablate = app.add_subcommand("ablate", "Run ablation settings and write a combined table");
  add_config(ablate);
  ablate->add_option("--settings", settings, "Comma-separated settings, e.g. a,b")->required();
  ablate->add_option("--dataset", dataset)->check(CLI::ExistingDirectory);
  ablate->add_flag("--resume", resume);
  auto* rerun = app.add_subcommand("rerun", "Re-execute the job recorded in a run manifest");
  rerun->add_option("--manifest", manifest_file)->required()->check(CLI::ExistingFile);
  rerun->add_option("--out-dir", out_dir, "Output directory (defaults to the recorded one)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (rerun->parsed()) {
      const auto m = read_run_manifest(manifest_file);
      Invocation inv;
      inv.command = m.at("command").get<std::string>();
      inv.config = experiment_from_json(m.at("config"));
      inv.args = m.at("args");
      inv.out_dir = out_dir.empty() ? fs::path(m.value("out_dir", std::string("."))) : fs::path(out_dir);
      return execute_with_manifest(inv, {{"rerun_of", fs::absolute(manifest_file).string()}});
    }
    CLI::App* sub = app.get_subcommands().front();
    Invocation inv;
    inv.command = sub->get_name();
    if (!config_file.empty() && !preset_name.empty()) {
      throw UsageError("--config and --preset are mutually exclusive");
    }
    if (!config_file.empty()) {
      inv.config = load_config(config_file);
    } else if (!preset_name.empty()) {
      inv.config = preset(preset_name);
    } else if (inv.command == "evaluate") {
      inv.config = preset("default");
    } else {
      throw UsageError(inv.command + " needs --config or --preset");
    }
    for (auto* o : seed_opts) {
      if (o->count() > 0) {
        inv.config.seed = seed;
        inv.config.fan_out_seeds();
      }
    }
    inv.config.validate();
    put_path(inv.args, "dataset", dataset);
    put_path(inv.args, "gan_checkpoint", gan_checkpoint);
    put_path(inv.args, "encoder_dir", encoder_dir);
    inv.args["resume"] = resume;
    inv.args["settings"] = settings;
    inv.out_dir = resolve_out_dir(out_dir, inv.command, inv.config.name);
    return execute_with_manifest(inv, {{"argv", args}});
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    args.emplace_back(argv[i]);
  }
  return run(args);
}

}  // namespace segshift::cli
