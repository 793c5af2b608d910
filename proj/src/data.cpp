#include "segshift/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <json.hpp>

#include "segshift/config.hpp"
#include "segshift/errors.hpp"
#include "segshift/image_io.hpp"

namespace segshift {
namespace {

using Vec2 = std::pair<double, double>;  // (y, x)

constexpr int kMaxShapeAttempts = 200;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::array<double, 3> palette_color(Rng& rng, bool foreground) {
  std::array<double, 3> c{};
  for (auto& v : c) {
    v = foreground ? uniform(rng, 0.1, 0.9) : uniform(rng, -0.9, -0.1);
  }
  return c;
}

// Low-frequency value noise in [-1, 1], [1, R, R].
torch::Tensor value_noise(int resolution, Rng& rng) {
  auto grid = torch::empty({1, 1, 5, 5}, torch::kFloat);
  auto acc = grid.accessor<float, 4>();
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      acc[0][0][i][j] = static_cast<float>(uniform(rng, -1.0, 1.0));
    }
  }
  namespace F = torch::nn::functional;
  return F::interpolate(grid, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{resolution, resolution})
                                  .mode(torch::kBilinear)
                                  .align_corners(true))
      .squeeze(0);
}

torch::Tensor texture(Texture kind, int resolution, bool foreground, Rng& rng) {
  const double lo = foreground ? 0.1 : -0.9;
  const double hi = foreground ? 0.9 : -0.1;
  const auto base = palette_color(rng, foreground);
  auto img = torch::empty({3, resolution, resolution}, torch::kFloat);
  for (int c = 0; c < 3; ++c) {
    img[c].fill_(base[static_cast<std::size_t>(c)]);
  }
  switch (kind) {
    case Texture::Flat:
      break;
    case Texture::Gradient: {
      const auto other = palette_color(rng, foreground);
      const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      auto coords = torch::arange(resolution, torch::kFloat).add(0.5).div(resolution).sub(0.5);
      auto yy = coords.view({resolution, 1});
      auto xx = coords.view({1, resolution});
      // t in [0, 1] along the gradient direction.
      auto t = (yy * std::sin(angle) + xx * std::cos(angle)) / std::sqrt(2.0) + 0.5;
      for (int c = 0; c < 3; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        img[c] = base[cu] + (other[cu] - base[cu]) * t;
      }
      break;
    }
    case Texture::Noise: {
      for (int c = 0; c < 3; ++c) {
        img[c] += 0.2 * value_noise(resolution, rng)[0];
      }
      img.clamp_(lo, hi);
      break;
    }
  }
  return img;
}

bool inside_polygon(const std::vector<Vec2>& poly, double y, double x) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [yi, xi] = poly[i];
    const auto [yj, xj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
      in = !in;
    }
  }
  return in;
}

double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    a += poly[j].second * poly[i].first - poly[i].second * poly[j].first;
  }
  return std::abs(a) / 2.0;
}

// Rasterizes one object with the requested area (in pixels) around `center`.
torch::Tensor rasterize_object(ObjectKind kind, double area, Vec2 center, int resolution, Rng& rng) {
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  std::vector<Vec2> poly;
  double semi_a = 0.0;
  double semi_b = 0.0;
  switch (kind) {
    case ObjectKind::Ellipse: {
      const double ratio = uniform(rng, 0.6, 1.0);
      semi_a = std::sqrt(area / (std::numbers::pi * ratio));
      semi_b = ratio * semi_a;
      break;
    }
    case ObjectKind::Rectangle: {
      const double ratio = uniform(rng, 0.5, 1.0);
      const double h = std::sqrt(area * ratio);
      const double w = area / h;
      const std::array<Vec2, 4> corners{{{-h / 2, -w / 2}, {-h / 2, w / 2}, {h / 2, w / 2}, {h / 2, -w / 2}}};
      for (const auto& [py, px] : corners) {
        poly.emplace_back(center.first + py * ct - px * st, center.second + py * st + px * ct);
      }
      break;
    }
    case ObjectKind::Polygon: {
      const int vertices = std::uniform_int_distribution<int>(5, 8)(rng);
      std::vector<double> angles;
      for (int i = 0; i < vertices; ++i) {
        angles.push_back((i + uniform(rng, -0.3, 0.3)) * 2.0 * std::numbers::pi / vertices);
      }
      std::vector<Vec2> unit;
      for (double a : angles) {
        const double r = uniform(rng, 0.75, 1.25);
        unit.emplace_back(r * std::sin(a), r * std::cos(a));
      }
      const double scale = std::sqrt(area / polygon_area(unit));
      for (const auto& [py, px] : unit) {
        poly.emplace_back(center.first + scale * py, center.second + scale * px);
      }
      break;
    }
  }
  auto mask = torch::zeros({1, resolution, resolution}, torch::kFloat);
  auto acc = mask.accessor<float, 3>();
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const double py = y + 0.5;
      const double px = x + 0.5;
      bool in = false;
      if (kind == ObjectKind::Ellipse) {
        const double dy = py - center.first;
        const double dx = px - center.second;
        const double u = dy * ct + dx * st;
        const double v = -dy * st + dx * ct;
        in = (u * u) / (semi_a * semi_a) + (v * v) / (semi_b * semi_b) <= 1.0;
      } else {
        in = inside_polygon(poly, py, px);
      }
      acc[0][y][x] = in ? 1.0f : 0.0f;
    }
  }
  return mask;
}

std::string record_stem(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

}  // namespace

std::string to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::Ellipse:
      return "ellipse";
    case ObjectKind::Rectangle:
      return "rectangle";
    case ObjectKind::Polygon:
      return "polygon";
  }
  return "?";
}

std::string to_string(Texture texture) {
  switch (texture) {
    case Texture::Flat:
      return "flat";
    case Texture::Gradient:
      return "gradient";
    case Texture::Noise:
      return "noise";
  }
  return "?";
}

ObjectKind parse_object_kind(const std::string& s) {
  if (s == "ellipse") return ObjectKind::Ellipse;
  if (s == "rectangle") return ObjectKind::Rectangle;
  if (s == "polygon") return ObjectKind::Polygon;
  throw ConfigError("unknown object kind '" + s + "'");
}

Texture parse_texture(const std::string& s) {
  if (s == "flat") return Texture::Flat;
  if (s == "gradient") return Texture::Gradient;
  if (s == "noise") return Texture::Noise;
  throw ConfigError("unknown texture family '" + s + "'");
}

void SynthParams::validate() const {
  if (resolution < 16) {
    throw ConfigError("synthetic resolution must be >= 16");
  }
  if (object_kinds.empty()) {
    throw ConfigError("at least one object kind is required");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max < 1.0)) {
    throw ConfigError("object scale range must satisfy 0 < min <= max < 1");
  }
  if (position_jitter < 0) {
    throw ConfigError("position jitter must be non-negative");
  }
}

SynthLayers synth_layers(const SynthParams& params, Rng& rng) {
  params.validate();
  const int r = params.resolution;
  const double pixels = static_cast<double>(r) * r;
  std::uniform_int_distribution<std::size_t> pick_kind(0, params.object_kinds.size() - 1);
  std::uniform_int_distribution<int> jitter(-params.position_jitter, params.position_jitter);
  SynthLayers layers;
  for (int attempt = 0; attempt < kMaxShapeAttempts; ++attempt) {
    const auto kind = params.object_kinds[pick_kind(rng)];
    const double fraction = uniform(rng, params.scale_min, params.scale_max);
    const Vec2 center{r / 2.0 + jitter(rng), r / 2.0 + jitter(rng)};
    auto mask = rasterize_object(kind, fraction * pixels, center, r, rng);
    const double got = mask.sum().item<double>() / pixels;
    if (got >= params.scale_min && got <= params.scale_max) {
      layers.mask = mask;
      break;
    }
  }
  if (!layers.mask.defined()) {
    throw ConfigError("cannot rasterize an object with area fraction in [" + std::to_string(params.scale_min) +
                      ", " + std::to_string(params.scale_max) + "] at resolution " + std::to_string(r));
  }
  layers.background = texture(params.background_texture, r, false, rng);
  layers.foreground = texture(params.foreground_texture, r, true, rng);
  return layers;
}

DatasetRecord synth_scene(const SynthParams& params, Rng& rng) {
  auto layers = synth_layers(params, rng);
  DatasetRecord rec;
  rec.image = torch::lerp(layers.background, layers.foreground, layers.mask);
  rec.gt_mask = layers.mask;
  return rec;
}

std::vector<ManifestEntry> build_synth_dataset(int n, const SynthParams& params, const std::filesystem::path& dir) {
  if (n < 1) {
    throw std::invalid_argument("dataset size must be >= 1");
  }
  params.validate();
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    const auto stem = record_stem(static_cast<std::size_t>(i));
    e.file = "images/" + stem + ".png";
    e.gt_mask_file = "masks/" + stem + ".png";
    e.seed = derive_seed(params.seed, "synth-record", static_cast<std::uint64_t>(i));
    entries.push_back(std::move(e));
  }
  rebuild_synth_dataset(entries, params, dir);
  return entries;
}

void rebuild_synth_dataset(const std::vector<ManifestEntry>& entries, const SynthParams& params,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kSynthParamsName);
    if (!out) {
      throw std::runtime_error("cannot write to " + dir.string());
    }
    out << to_json(params).dump(2) << "\n";
  }
  for (const auto& e : entries) {
    Rng rng(e.seed);
    const auto rec = synth_scene(params, rng);
    write_image(dir / e.file, rec.image);
    if (e.gt_mask_file) {
      write_mask(dir / *e.gt_mask_file, *rec.gt_mask);
    }
  }
  write_manifest(dir / kManifestName, entries);
}

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(file);
  if (!out) {
    throw std::runtime_error("cannot write manifest " + file.string());
  }
  for (const auto& e : entries) {
    nlohmann::json j{{"file", e.file}, {"seed", e.seed}};
    if (e.gt_mask_file) {
      j["gt_mask_file"] = *e.gt_mask_file;
    }
    out << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw std::runtime_error("cannot read manifest " + file.string());
  }
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.file = j.at("file").get<std::string>();
    e.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("gt_mask_file")) {
      e.gt_mask_file = j.at("gt_mask_file").get<std::string>();
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

ImageFolder::ImageFolder(std::filesystem::path dir, int resolution, std::size_t limit)
    : dir_(std::move(dir)), resolution_(resolution) {
  if (!std::filesystem::is_directory(dir_)) {
    throw std::runtime_error("not a directory: " + dir_.string());
  }
  std::vector<std::filesystem::path> all;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.is_regular_file()) {
      all.push_back(entry.path());
    }
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  for (const auto& p : all) {
    if (!is_decodable_image(p)) {
      std::cerr << "warning: skipping non-image file " << p.string() << "\n";
      continue;
    }
    files_.push_back(p);
    if (limit != 0 && files_.size() == limit) {
      break;
    }
  }
  if (files_.empty()) {
    throw std::runtime_error("no decodable images in " + dir_.string());
  }
}

DatasetRecord ImageFolder::get(std::size_t i) const {
  DatasetRecord rec;
  rec.image = resize_square(read_image(files_.at(i)), resolution_);
  rec.name = files_.at(i).filename().string();
  return rec;
}

ImageFolder load_image_folder(const std::filesystem::path& dir, int resolution, std::size_t limit) {
  return ImageFolder(dir, resolution, limit);
}

ImageDataset ImageDataset::slice(int64_t begin, int64_t end) const {
  ImageDataset out;
  out.images = images.slice(0, begin, end);
  if (masks) {
    out.masks = masks->slice(0, begin, end);
  }
  out.names.assign(names.begin() + begin, names.begin() + end);
  return out;
}

ImageDataset load_dataset(const std::filesystem::path& dir, int resolution, std::size_t limit) {
  ImageDataset ds;
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> masks;
  const auto manifest = dir / kManifestName;
  if (std::filesystem::exists(manifest)) {
    auto entries = read_manifest(manifest);
    if (limit != 0 && entries.size() > limit) {
      entries.resize(limit);
    }
    bool all_masks = !entries.empty();
    for (const auto& e : entries) {
      all_masks = all_masks && e.gt_mask_file.has_value();
    }
    for (const auto& e : entries) {
      images.push_back(resize_square(read_image(dir / e.file), resolution));
      if (all_masks) {
        auto m = read_mask(dir / *e.gt_mask_file);
        if (m.size(1) != resolution || m.size(2) != resolution) {
          m = resize_square(m, resolution).gt(0.5).to(torch::kFloat);
        }
        masks.push_back(m);
      }
      ds.names.push_back(e.file);
    }
  } else {
    const auto folder = load_image_folder(dir, resolution, limit);
    for (std::size_t i = 0; i < folder.size(); ++i) {
      auto rec = folder.get(i);
      images.push_back(rec.image);
      ds.names.push_back(rec.name);
    }
  }
  if (images.empty()) {
    throw std::runtime_error("dataset " + dir.string() + " is empty");
  }
  ds.images = torch::stack(images);
  if (!masks.empty()) {
    ds.masks = torch::stack(masks);
  }
  return ds;
}

torch::Tensor resize_square(const torch::Tensor& image, int size) {
  const bool batched = image.dim() == 4;
  if (!batched && image.dim() != 3) {
    throw ShapeError("resize_square expects [C,H,W] or [N,C,H,W]");
  }
  auto x = batched ? image : image.unsqueeze(0);
  if (x.size(2) == size && x.size(3) == size) {
    return image;
  }
  const bool shrinking = x.size(2) > size || x.size(3) > size;
  namespace F = torch::nn::functional;
  auto y = F::interpolate(x.to(torch::kFloat), F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{size, size})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false)
                                                   .antialias(shrinking));
  return batched ? y : y.squeeze(0);
}

int crop_source_size(int resolution) { return static_cast<int>(std::lround(1.125 * resolution)); }

CropOffset sample_crop_offset(int slack, Rng& rng) {
  std::uniform_int_distribution<int> d(0, slack);
  CropOffset o;
  o.y = d(rng);
  o.x = d(rng);
  return o;
}

torch::Tensor crop(const torch::Tensor& image, int size, CropOffset offset) {
  const int64_t h = image.size(-2);
  const int64_t w = image.size(-1);
  if (offset.y < 0 || offset.x < 0 || offset.y + size > h || offset.x + size > w) {
    throw std::invalid_argument("crop window leaves the image");
  }
  return image.narrow(-2, offset.y, size).narrow(-1, offset.x, size);
}

torch::Tensor augment_real(const torch::Tensor& image, int resolution, Rng& rng) {
  if (image.dim() != 3 || image.size(1) < resolution || image.size(2) < resolution) {
    throw std::invalid_argument("augment_real needs an image of at least " + std::to_string(resolution) +
                                "x" + std::to_string(resolution));
  }
  const int src = crop_source_size(resolution);
  const auto resized = resize_square(image, src);
  return crop(resized, resolution, sample_crop_offset(src - resolution, rng)).contiguous();
}

torch::Tensor jitter_contrast(const torch::Tensor& background, const torch::Tensor& factors) {
  if (background.dim() != 4 || factors.dim() != 1 || factors.size(0) != background.size(0)) {
    throw ShapeError("jitter_contrast expects [N,C,H,W] and one factor per sample");
  }
  // The mean is accumulated in double so a constant image yields exactly its value,
  // and the update is written as B + (c - 1)(B - mu) so c == 1 is exact.
  const auto mu = background.to(torch::kDouble).mean({1, 2, 3}, /*keepdim=*/true).to(background.dtype());
  const auto c = factors.to(background.dtype()).view({-1, 1, 1, 1});
  return torch::clamp(background + (c - 1.0) * (background - mu), -1.0, 1.0);
}

torch::Tensor jitter_contrast(const torch::Tensor& background, std::pair<double, double> range, Rng& rng) {
  const auto [lo, hi] = range;
  if (!(lo > 0.0 && lo <= hi && std::isfinite(hi))) {
    throw ConfigError("contrast jitter range must satisfy 0 < lo <= hi");
  }
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> c(static_cast<std::size_t>(background.size(0)));
  for (auto& v : c) {
    v = lo == hi ? lo : d(rng);
  }
  return jitter_contrast(background, torch::tensor(c, torch::kDouble));
}

}  // namespace segshift
