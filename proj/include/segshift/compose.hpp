#pragma once

// Layered-scene compositing.
//
// Grids are torch tensors laid out as [C, H, W] or batched [N, C, H, W].
// Images live in [-1, 1]; masks are single-channel and live in [0, 1].
// Everything here is built from differentiable tensor ops, so gradients flow
// back to all three layers.

#include <span>
#include <vector>

#include <torch/torch.h>

#include "segshift/seeds.hpp"

namespace segshift {

/// Background B, foreground F and alpha matte m, all sharing H x W.
struct LayeredScene {
  torch::Tensor background;
  torch::Tensor foreground;
  torch::Tensor mask;
};

/// Integer pixel displacement. `dy` indexes rows (H), `dx` columns (W).
struct Shift {
  int dy = 0;
  int dx = 0;

  bool operator==(const Shift&) const = default;
};

/// Throws ShapeError unless the three layers agree in batch and spatial size
/// and the mask has one channel; throws DomainError for masks outside [0,1].
void validate_scene(const LayeredScene& scene);

/// x[p] = (1 - m[p]) B[p] + m[p] F[p].
///
/// Evaluated as torch::lerp, which returns B exactly where m == 0, F exactly
/// where m == 1, and never leaves [min(B,F), max(B,F)].
torch::Tensor compose(const LayeredScene& scene);

/// out[p] = grid[p + shift] when p + shift lies inside the grid, else `fill`.
/// Acts on the last two dimensions; any leading dimensions are carried along.
torch::Tensor translate(const torch::Tensor& grid, Shift shift, double fill = 0.0);

/// x[p] = (1 - m[p+s]) B[p] + m[p+s] F[p+s] with zero fill outside the grid.
///
/// Identical to compose({B, translate(F, s), translate(m, s)}); with s = (0,0)
/// it returns exactly compose(scene). Throws DomainError if |s| exceeds
/// `max_shift` on either axis.
torch::Tensor compose_shifted(const LayeredScene& scene, Shift shift, int max_shift);

/// Batched variant: sample i of the batch is shifted by shifts[i].
torch::Tensor compose_shifted(const LayeredScene& scene, std::span<const Shift> shifts, int max_shift);

/// Draws dy, dx independently and uniformly from {-delta, ..., delta}.
Shift sample_shift(int delta, Rng& rng);

std::vector<Shift> sample_shifts(std::size_t count, int delta, Rng& rng);

}  // namespace segshift
