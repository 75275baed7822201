#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace memesieve {

// Interleaved H x W x C pixels, values in [0, 1].
struct ImageInput {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> pixels;

  ImageInput() = default;
  ImageInput(int h, int w, int c = 3, float fill = 0.0F)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const ImageInput&) const = default;
};

// Binary H x W mask, 1 marks a member pixel.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

// Real-valued H x W field (heatmaps).
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Heatmap() = default;
  Heatmap(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Throws invalid_input unless dimensions are positive and every value is a
// finite number in [0, 1].
void validate_image(const ImageInput& image);

ImageInput resize_bilinear(const ImageInput& image, int height, int width);

// Digest over the 8-bit quantised pixels plus dimensions. Stable across
// float noise below half a quantisation step.
std::string image_digest(const ImageInput& image);

ImageInput read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageInput& image);
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
// 16-bit grayscale; values clamped to [0, 1].
void write_heatmap_png16(const std::filesystem::path& path, const Heatmap& heatmap);

// NumPy .npy (format 1.0, little-endian float64, C order).
void write_npy(const std::filesystem::path& path, const Heatmap& heatmap);
Heatmap read_npy(const std::filesystem::path& path);

}  // namespace memesieve
