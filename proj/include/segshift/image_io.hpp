#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace segshift {

/// Decodes an 8-bit image to a float RGB tensor [3, H, W] in [-1, 1].
torch::Tensor read_image(const std::filesystem::path& path);

/// Writes a [3, H, W] tensor in [-1, 1] as 8-bit RGB. Format follows the extension.
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

/// Reads a single-channel 8-bit mask as {0, 1} floats [1, H, W] (>= 128 is foreground).
torch::Tensor read_mask(const std::filesystem::path& path);

/// Writes a [1, H, W] mask in [0, 1] as single-channel 8-bit, rounding to 0..255.
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);

/// True when the file carries a signature of a raster format we can decode.
bool is_decodable_image(const std::filesystem::path& path);

}  // namespace segshift
