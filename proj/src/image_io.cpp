#include "segshift/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "segshift/errors.hpp"

namespace segshift {
namespace {

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
}

cv::Mat to_u8(const torch::Tensor& chw, double scale, double offset) {
  const auto c = chw.detach().to(torch::kDouble).cpu();
  const auto u8 = (c * scale + offset).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const int channels = static_cast<int>(u8.size(2));
  cv::Mat mat(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC(channels), u8.data_ptr());
  return mat.clone();
}

}  // namespace

torch::Tensor read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw std::runtime_error("cannot decode image " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat).div(127.5).sub(1.0).contiguous();
}

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError("write_image expects [3, H, W]");
  }
  cv::Mat rgb = to_u8(image, 127.5, 127.5);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  ensure_parent(path);
  if (!cv::imwrite(path.string(), bgr)) {
    throw std::runtime_error("cannot write image " + path.string());
  }
}

torch::Tensor read_mask(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) {
    throw std::runtime_error("cannot decode mask " + path.string());
  }
  auto t = torch::from_blob(gray.data, {1, gray.rows, gray.cols}, torch::kUInt8).clone();
  return t.ge(128).to(torch::kFloat);
}

void write_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
  if (mask.dim() != 3 || mask.size(0) != 1) {
    throw ShapeError("write_mask expects [1, H, W]");
  }
  ensure_parent(path);
  if (!cv::imwrite(path.string(), to_u8(mask, 255.0, 0.0))) {
    throw std::runtime_error("cannot write mask " + path.string());
  }
}

bool is_decodable_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    return false;
  }
  try {
    return cv::haveImageReader(path.string());
  } catch (const cv::Exception&) {
    return false;
  }
}

}  // namespace segshift
