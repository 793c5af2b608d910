#include "segshift/compose.hpp"

#include <cstdlib>
#include <sstream>

#include "segshift/errors.hpp"

namespace segshift {
namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

// Moves `grid` by `offset` along `dim` so that out[i] = grid[i + offset].
torch::Tensor shift_axis(const torch::Tensor& grid, int64_t dim, int offset, double fill) {
  if (offset == 0) {
    return grid;
  }
  const int64_t n = grid.size(dim);
  if (std::abs(offset) >= n) {
    return torch::full_like(grid, fill);
  }
  const int64_t keep = n - std::abs(offset);
  const int64_t last = grid.dim() - 1;
  // constant_pad_nd takes (before, after) pairs starting from the last dimension.
  std::vector<int64_t> pad(2 * (last - dim + 1), 0);
  const std::size_t slot = static_cast<std::size_t>(2 * (last - dim));
  if (offset > 0) {
    pad[slot + 1] = offset;
    return torch::constant_pad_nd(grid.narrow(dim, offset, keep), pad, fill);
  }
  pad[slot] = -offset;
  return torch::constant_pad_nd(grid.narrow(dim, 0, keep), pad, fill);
}

void check_shift(Shift s, int max_shift) {
  if (max_shift < 0 || std::abs(s.dy) > max_shift || std::abs(s.dx) > max_shift) {
    throw DomainError("shift (" + std::to_string(s.dy) + "," + std::to_string(s.dx) +
                      ") exceeds the configured range " + std::to_string(max_shift));
  }
}

}  // namespace

void validate_scene(const LayeredScene& scene) {
  const auto& b = scene.background;
  const auto& f = scene.foreground;
  const auto& m = scene.mask;
  if (!b.defined() || !f.defined() || !m.defined()) {
    throw ShapeError("layered scene has an undefined layer");
  }
  if (b.dim() < 3 || b.dim() > 4 || b.sizes() != f.sizes() || m.dim() != b.dim()) {
    throw ShapeError("layer shapes disagree: B" + shape_str(b) + " F" + shape_str(f) + " m" +
                     shape_str(m));
  }
  const int64_t c = b.dim() - 3;
  if (m.size(c) != 1 || m.size(c + 1) != b.size(c + 1) || m.size(c + 2) != b.size(c + 2) ||
      (c == 1 && m.size(0) != b.size(0))) {
    throw ShapeError("mask shape " + shape_str(m) + " does not match layers " + shape_str(b));
  }
  const auto range = torch::aminmax(m.detach());
  if (!(std::get<0>(range).item<double>() >= 0.0) || !(std::get<1>(range).item<double>() <= 1.0)) {
    throw DomainError("mask entries must lie in [0, 1]");
  }
}

torch::Tensor compose(const LayeredScene& scene) {
  validate_scene(scene);
  return torch::lerp(scene.background, scene.foreground, scene.mask);
}

torch::Tensor translate(const torch::Tensor& grid, Shift shift, double fill) {
  if (grid.dim() < 2) {
    throw ShapeError("translate needs at least two dimensions, got " + shape_str(grid));
  }
  const int64_t rows = grid.dim() - 2;
  return shift_axis(shift_axis(grid, rows, shift.dy, fill), rows + 1, shift.dx, fill);
}

torch::Tensor compose_shifted(const LayeredScene& scene, Shift shift, int max_shift) {
  check_shift(shift, max_shift);
  validate_scene(scene);
  return torch::lerp(scene.background, translate(scene.foreground, shift, 0.0),
                     translate(scene.mask, shift, 0.0));
}

torch::Tensor compose_shifted(const LayeredScene& scene, std::span<const Shift> shifts, int max_shift) {
  validate_scene(scene);
  if (scene.background.dim() != 4 || static_cast<int64_t>(shifts.size()) != scene.background.size(0)) {
    throw ShapeError("need one shift per batch sample");
  }
  for (const auto& s : shifts) {
    check_shift(s, max_shift);
  }
  std::vector<torch::Tensor> fg;
  std::vector<torch::Tensor> mask;
  fg.reserve(shifts.size());
  mask.reserve(shifts.size());
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    const auto idx = static_cast<int64_t>(i);
    fg.push_back(translate(scene.foreground.narrow(0, idx, 1), shifts[i], 0.0));
    mask.push_back(translate(scene.mask.narrow(0, idx, 1), shifts[i], 0.0));
  }
  return torch::lerp(scene.background, torch::cat(fg, 0), torch::cat(mask, 0));
}

Shift sample_shift(int delta, Rng& rng) {
  if (delta < 0) {
    throw DomainError("shift range must be non-negative");
  }
  std::uniform_int_distribution<int> axis(-delta, delta);
  Shift s;
  s.dy = axis(rng);
  s.dx = axis(rng);
  return s;
}

std::vector<Shift> sample_shifts(std::size_t count, int delta, Rng& rng) {
  std::vector<Shift> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(sample_shift(delta, rng));
  }
  return out;
}

}  // namespace segshift
