#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace freeevent {

/// Interleaved H x W x C image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary (or soft, in [0,1]) single-channel mask, row-major H x W.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Mask() = default;
  Mask(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  double sum() const;
  /// Thresholds at 0.5.
  Mask binarized() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// PNG input is converted to 8-bit gray or RGB; values are scaled to [0, 1].
Image read_png(const std::filesystem::path& path);
/// Quantizes to 8 bits (round to nearest) after clamping to [0, 1].
void write_png(const std::filesystem::path& path, const Image& image);

/// Reads a mask from a PNG (first channel, 0 = background, 255 = entity) or
/// from a run-length text sidecar (`.rle`, see write_mask_rle).
Mask read_mask(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

/// Text format: "rle <height> <width>" then alternating run lengths starting
/// with a background run, row-major.
void write_mask_rle(const std::filesystem::path& path, const Mask& mask);
std::string encode_mask_rle(const Mask& mask);
Mask decode_mask_rle(const std::string& text);

/// Rec. 601 luma.
std::vector<double> to_grayscale(const Image& image);

}  // namespace freeevent
