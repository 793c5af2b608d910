#include "segshift/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "segshift/errors.hpp"
#include "segshift/image_io.hpp"
#include "segshift/losses.hpp"
#include "segshift/seeds.hpp"

namespace segshift {
namespace {

bool is_binary(const torch::Tensor& t) {
  return (t.eq(0) | t.eq(1)).all().item<bool>();
}

void check_mask_batch(const torch::Tensor& t, const char* what) {
  if (t.dim() != 4 || t.size(1) != 1) {
    throw ShapeError(std::string(what) + " must be [N,1,H,W]");
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) {
    return 0.0;
  }
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string index_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

torch::Tensor binarize_mask(const torch::Tensor& m, double threshold) {
  return m.gt(threshold).to(m.scalar_type());
}

double iou(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError("iou: mask shapes differ");
  }
  if (!is_binary(a) || !is_binary(b)) {
    throw DomainError("iou: masks must be binary");
  }
  const auto ab = a.to(torch::kBool);
  const auto bb = b.to(torch::kBool);
  const auto inter = (ab & bb).sum().item<int64_t>();
  const auto uni = (ab | bb).sum().item<int64_t>();
  if (uni == 0) {
    return 1.0;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

nlohmann::json SegmentationReport::to_json() const {
  return {{"setting", setting_id},
          {"miou", miou},
          {"reference_miou", reference_miou},
          {"mean_mask_size", mean_mask_size},
          {"n_images", n_images},
          {"nonempty_gt", nonempty_gt},
          {"per_image_iou", per_image_iou}};
}

SegmentationReport score_masks(const torch::Tensor& predicted, const torch::Tensor& gts,
                               const std::string& setting_id) {
  check_mask_batch(predicted, "predicted masks");
  check_mask_batch(gts, "ground truth masks");
  if (predicted.sizes() != gts.sizes()) {
    throw ShapeError("predicted and ground truth masks differ in shape");
  }
  SegmentationReport r;
  r.setting_id = setting_id;
  r.n_images = predicted.size(0);
  std::vector<double> sizes;
  std::vector<double> reference;
  const auto pixels = static_cast<double>(predicted[0].numel());
  for (int64_t i = 0; i < r.n_images; ++i) {
    r.per_image_iou.push_back(iou(predicted[i], gts[i]));
    const auto gt_count = gts[i].sum().item<double>();
    reference.push_back(gt_count / pixels);
    sizes.push_back(predicted[i].sum().item<double>() / pixels);
    r.nonempty_gt += gt_count > 0 ? 1 : 0;
  }
  r.miou = mean_of(r.per_image_iou);
  r.reference_miou = mean_of(reference);
  r.mean_mask_size = mean_of(sizes);
  return r;
}

SegmentationReport reference_report(const torch::Tensor& gts, const std::string& setting_id) {
  return score_masks(torch::ones_like(gts), gts, setting_id);
}

Segmentation segment_images(LayeredGenerator& generator, std::vector<EncoderCheckpoint>& encoders,
                            const torch::Tensor& images, double threshold) {
  const int64_t n = images.size(0);
  torch::NoGradGuard no_grad;
  generator->eval();
  std::vector<torch::Tensor> soft(static_cast<std::size_t>(n));
  std::vector<torch::Tensor> comps(static_cast<std::size_t>(n));
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  for (auto& e : encoders) {
    const int64_t begin = std::max<int64_t>(0, e.begin);
    const int64_t end = std::min(n, e.end);
    if (begin >= end) {
      continue;
    }
    if (!(e.net == generator->config())) {
      throw ConfigError("encoder chunk " + std::to_string(e.chunk) + " was trained against another generator config");
    }
    e.encoder->eval();
    const auto scene = generator->forward_codes(e.encoder->forward(images.slice(0, begin, end)));
    const auto x_e = compose(scene);
    for (int64_t i = begin; i < end; ++i) {
      soft[static_cast<std::size_t>(i)] = scene.mask[i - begin];
      comps[static_cast<std::size_t>(i)] = x_e[i - begin];
      covered[static_cast<std::size_t>(i)] = true;
    }
  }
  for (int64_t i = 0; i < n; ++i) {
    if (!covered[static_cast<std::size_t>(i)]) {
      throw std::runtime_error("image " + std::to_string(i) + " is not covered by any encoder chunk");
    }
  }
  Segmentation s;
  s.soft_masks = torch::stack(soft);
  s.composites = torch::stack(comps);
  s.masks = binarize_mask(s.soft_masks, threshold);
  return s;
}

MaskStats generated_mask_stats(LayeredGenerator& generator, int samples, std::uint64_t seed) {
  if (samples <= 0) {
    throw std::invalid_argument("generated_mask_stats needs at least one sample");
  }
  torch::NoGradGuard no_grad;
  auto rng = make_rng(seed, "mask-stats");
  double sum = 0.0;
  double binary = 0.0;
  const int chunk = 250;
  for (int done = 0; done < samples; done += chunk) {
    const int n = std::min(chunk, samples - done);
    const auto m = generator->forward(sample_latent(n, generator->config().latent_dim, rng)).mask.to(torch::kDouble);
    sum += m.sum().item<double>();
    binary += torch::minimum(m, 1.0 - m).sum().item<double>();
  }
  const double count = static_cast<double>(samples) * generator->config().resolution * generator->config().resolution;
  return {sum / count, binary / count, samples};
}

void emit_report(std::vector<SegmentationReport> reports, const std::filesystem::path& dir) {
  if (reports.empty()) {
    throw std::invalid_argument("emit_report needs at least one report");
  }
  std::stable_sort(reports.begin(), reports.end(),
                   [](const auto& a, const auto& b) { return a.setting_id < b.setting_id; });
  std::filesystem::create_directories(dir);
  std::ofstream table(dir / kReportTableName);
  if (!table) {
    throw std::runtime_error("cannot write " + (dir / kReportTableName).string());
  }
  table << "setting,miou,reference_miou,mean_mask_size,n_images,nonempty_gt\n";
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) {
    table << r.setting_id << "," << fixed(r.miou) << "," << fixed(r.reference_miou) << ","
          << fixed(r.mean_mask_size) << "," << r.n_images << "," << r.nonempty_gt << "\n";
    all.push_back(r.to_json());
  }
  std::ofstream(dir / "report.json") << all.dump(2) << "\n";
}

torch::Tensor montage(const torch::Tensor& tiles, int rows, int cols, bool is_mask) {
  if (tiles.dim() != 4 || (tiles.size(1) != 1 && tiles.size(1) != 3)) {
    throw ShapeError("montage expects [N,1|3,H,W] tiles");
  }
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("montage needs positive rows and cols");
  }
  auto t = tiles.detach().to(torch::kFloat);
  if (is_mask) {
    t = t * 2.0 - 1.0;
  }
  if (t.size(1) == 1) {
    t = t.expand({-1, 3, -1, -1});
  }
  const int64_t h = t.size(2);
  const int64_t w = t.size(3);
  auto grid = torch::full({3, rows * h, cols * w}, -1.0f);
  const int64_t count = std::min<int64_t>(t.size(0), static_cast<int64_t>(rows) * cols);
  for (int64_t i = 0; i < count; ++i) {
    const int64_t r = i / cols;
    const int64_t c = i % cols;
    grid.narrow(1, r * h, h).narrow(2, c * w, w).copy_(t[i]);
  }
  return grid;
}

void emit_figures(const std::filesystem::path& dir, const torch::Tensor& images, const Segmentation& seg,
                  const EvalConfig& config, const std::vector<std::string>& names) {
  const auto fig = dir / "figures";
  const auto mask_dir = dir / "masks";
  std::filesystem::create_directories(fig);
  std::filesystem::create_directories(mask_dir);
  const int rows = config.montage_rows;
  const int cols = config.montage_cols;
  const auto red = torch::tensor({1.0f, -1.0f, -1.0f}).view({1, 3, 1, 1});
  const auto alpha = seg.masks * 0.5;
  const auto overlay = images * (1.0 - alpha) + red * alpha;
  write_image(fig / "input.png", montage(images, rows, cols, false));
  write_image(fig / "composite.png", montage(seg.composites, rows, cols, false));
  write_image(fig / "mask.png", montage(seg.masks, rows, cols, true));
  write_image(fig / "overlay.png", montage(overlay, rows, cols, false));
  for (int64_t i = 0; i < seg.masks.size(0); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const std::string stem =
        idx < names.size() ? std::filesystem::path(names[idx]).stem().string() : index_name(idx);
    write_mask(mask_dir / (stem + ".png"), seg.masks[i]);
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ImageDataset& data,
                                const std::filesystem::path& out_dir, const std::string& setting_id, bool resume) {
  config.validate();
  if (data.size() == 0) {
    throw std::invalid_argument("dataset is empty");
  }
  if (data.images.size(2) != config.gan.resolution()) {
    throw ConfigError("dataset resolution does not match the network resolution");
  }
  std::filesystem::create_directories(out_dir);
  ExperimentResult result;
  std::cerr << "[" << setting_id << "] training GAN for " << config.gan.total_steps() << " steps\n";
  TrainOptions options;
  options.resume = resume;
  options.progress_every = 500;
  result.train = train_gan(config.gan, data.images, out_dir / "gan", options);
  auto ck = load_gan_checkpoint(result.train.checkpoint);

  const int64_t n_eval = std::min<int64_t>(config.eval.eval_images, data.size());
  const auto subset = data.slice(0, n_eval);
  std::cerr << "[" << setting_id << "] training encoders on " << n_eval << " images\n";
  result.chunks = train_encoder(config.encoder, ck.models, subset.images, out_dir / "encoder");
  auto encoders = load_encoder_checkpoints(out_dir / "encoder");
  const auto seg = segment_images(ck.models.generator, encoders, subset.images, config.eval.threshold);
  result.mask_stats = generated_mask_stats(ck.models.generator, config.eval.mask_samples,
                                           derive_seed(config.seed, "eval"));

  nlohmann::json summary = {{"mask_stats",
                             {{"mean_mask", result.mask_stats.mean_mask},
                              {"binary_loss", result.mask_stats.binary_loss},
                              {"samples", result.mask_stats.samples}}},
                            {"gan_steps", result.train.steps},
                            {"chunks", nlohmann::json::array()}};
  for (const auto& c : result.chunks) {
    summary["chunks"].push_back(
        {{"chunk", c.chunk}, {"begin", c.begin}, {"end", c.end}, {"initial_loss", c.initial_loss},
         {"final_loss", c.final_loss}});
  }
  if (subset.masks) {
    result.report = score_masks(seg.masks, *subset.masks, setting_id);
    summary["report"] = result.report->to_json();
    emit_report({*result.report}, out_dir);
  } else {
    std::cerr << "[" << setting_id << "] dataset has no ground truth masks; mIoU omitted\n";
  }
  std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
  emit_figures(out_dir, subset.images, seg, config.eval, subset.names);
  return result;
}

ExperimentResult run_ablation(char setting, const ExperimentConfig& base, const ImageDataset& data,
                              const std::filesystem::path& out_dir, bool resume) {
  const auto cfg = ablation_config(setting, base);
  return run_experiment(cfg, data, out_dir / std::string(1, setting), std::string(1, setting), resume);
}

}  // namespace segshift
