#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bfr/image.hpp"
#include "bfr/metrics.hpp"
#include "json.hpp"

namespace bfr::niqe {

inline constexpr std::size_t kFeatures = 36;
using Features = std::array<double, kFeatures>;

struct Model {
  std::vector<double> mean;  // kFeatures
  std::vector<double> cov;   // kFeatures x kFeatures, row-major
  int patch = 32;
  int scales = 2;
  double quantile = 0.75;
  std::string corpus_hash;
  std::size_t patches = 0;

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
};

double lanczos_gamma(double x);

struct GgdFit {
  double shape = 0.0;
  double variance = 0.0;
};
struct AggdFit {
  double shape = 0.0;
  double mean = 0.0;
  double left_variance = 0.0;
  double right_variance = 0.0;
};
GgdFit fit_ggd(std::span<const double> x);
AggdFit fit_aggd(std::span<const double> x);

/// (I - mu) / (sigma + 1) with 7x7 Gaussian local statistics on a 0..255 plane.
/// When `local_sigma` is given it receives the sigma map.
std::vector<double> mscn(std::size_t height, std::size_t width, std::span<const double> plane,
                         std::vector<double>* local_sigma = nullptr);

struct PatchSet {
  std::vector<Features> features;
  std::vector<double> sharpness;
};

/// Features of every patch of every channel plane. Patches with non-finite
/// features are dropped.
PatchSet extract(const ImageTensor& img, int patch);

Model fit(std::span<const ImageTensor> images, int patch = 32, double quantile = 0.75);
Model fit(const std::filesystem::path& pristine_dir, int patch = 32, double quantile = 0.75);

metrics::MetricValue score(const ImageTensor& img, const Model& model);

}  // namespace bfr::niqe
