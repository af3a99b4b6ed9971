#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bfr/image.hpp"

namespace bfr::metrics {

struct MetricValue {
  std::string name;
  double value = 0.0;
  bool higher_is_better = true;
};

/// Stand-in for an infinite PSNR inside aggregate means.
inline constexpr double kPsnrCap = 99.0;
inline constexpr int kMsSsimScales = 5;
inline constexpr double kMsSsimWeights[kMsSsimScales] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// 10 log10(255^2 / MSE) on 8-bit values; +inf when the images quantize equal.
MetricValue psnr(const ImageTensor& a, const ImageTensor& b);
/// Mean local SSIM over valid 11x11 Gaussian windows, averaged over channels.
MetricValue ssim(const ImageTensor& a, const ImageTensor& b);
/// Needs min(width, height) >= 11 * 2^(scales - 1). Weights are renormalized
/// when fewer than five scales are used.
MetricValue ms_ssim(const ImageTensor& a, const ImageTensor& b, int scales = kMsSsimScales);

/// Normalized 11-tap Gaussian (sigma 1.5) used by SSIM.
std::vector<double> ssim_window();

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct LandmarkSet {
  std::string id;
  std::vector<Point> points;
};

struct IdEmbedding {
  std::string id;
  std::vector<double> vec;
};

/// Mean Euclidean distance with coordinates scaled into [0,1]^2.
MetricValue afld(const LandmarkSet& restored, const LandmarkSet& gt, std::size_t width, std::size_t height);
MetricValue afics(std::span<const double> restored, std::span<const double> gt);
inline MetricValue afics(const IdEmbedding& restored, const IdEmbedding& gt) {
  return afics(restored.vec, gt.vec);
}

/// JSON-lines readers: {"id", "points": [[x,y],...]} and {"id", "vec": [...]}.
std::map<std::string, LandmarkSet> read_landmarks(const std::filesystem::path& path);
std::map<std::string, IdEmbedding> read_embeddings(const std::filesystem::path& path);

}  // namespace bfr::metrics
