#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bfr {

enum class ImageRole { HQ, LQ, Restored };

/// Interleaved H x W x C raster with samples in [0, 1].
struct ImageTensor {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<double> data;
  ImageRole role = ImageRole::HQ;

  ImageTensor() = default;
  ImageTensor(std::size_t w, std::size_t h, std::size_t c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }

  std::vector<double> plane(std::size_t c) const;
  void set_plane(std::size_t c, std::span<const double> values);
  bool same_dims(const ImageTensor& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  void clamp();
};

/// round(v * 255) with halves rounded up, clamped to [0, 255].
std::uint8_t quantize(double v);
std::vector<std::uint8_t> to_bytes(const ImageTensor& img);
ImageTensor from_bytes(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb);

/// Binary PPM (P6) or PGM (P5, replicated to RGB), maxval 255.
ImageTensor load_image(const std::filesystem::path& path);
ImageTensor decode_pnm(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
/// Writes P6 with quantize() applied to every sample.
void save_image(const ImageTensor& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const ImageTensor& img);

/// Image files (.ppm/.pgm/.pnm) in a directory, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);
/// Filename without extension; the id used by manifests and reports.
std::string image_id(const std::filesystem::path& path);
/// Width and height from a PPM/PGM header without decoding the raster.
std::pair<std::size_t, std::size_t> image_dimensions(const std::filesystem::path& path);

}  // namespace bfr
