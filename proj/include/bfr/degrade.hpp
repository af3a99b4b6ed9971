#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bfr/image.hpp"
#include "bfr/jpeg.hpp"
#include "bfr/manifest.hpp"
#include "bfr/rng.hpp"
#include "json.hpp"

namespace bfr::degrade {

enum class Setting { Blur, Noise, Jpeg, LR, Full };
enum class BlurKind { Gaussian, Motion };
enum class NoiseFamily { Gaussian, Laplace, Poisson };

std::string to_string(Setting s);
Setting parse_setting(const std::string& name);  // blur|noise|jpeg|lr|full
std::string to_string(NoiseFamily f);
NoiseFamily parse_noise_family(const std::string& name);

struct BlurParams {
  BlurKind kind = BlurKind::Gaussian;
  double sigma = 0.0;  // gaussian
  int length = 0;      // motion
  double angle = 0.0;  // motion, degrees
};

struct ResizeParams {
  int factor = 2;
  std::size_t width = 0;  // intermediate (downsampled) size
  std::size_t height = 0;
};

struct NoiseParams {
  NoiseFamily family = NoiseFamily::Gaussian;
  // Std-dev in [0,1] units for gaussian/laplace; peak photon count for poisson.
  double strength = 0.0;
};

struct JpegParams {
  int quality = 75;
  jpeg::Subsampling subsampling = jpeg::Subsampling::k444;
};

/// Fully sampled, replayable parameters for one LQ image. Stages that are
/// present run in the fixed order blur -> resize -> noise -> jpeg.
struct DegradationSpec {
  Setting setting = Setting::Blur;
  std::uint64_t seed = 0;
  std::optional<BlurParams> blur;
  std::optional<ResizeParams> resize;
  std::optional<NoiseParams> noise;
  std::optional<JpegParams> jpeg;

  nlohmann::json params_json() const;
  static DegradationSpec from_json(Setting setting, std::uint64_t seed, const nlohmann::json& params);
};

/// Sampling ranges; defaults span mild to severe degradations.
struct Ranges {
  double gaussian_sigma_min = 1.0, gaussian_sigma_max = 5.0;
  int motion_length_min = 5, motion_length_max = 15;
  double motion_angle_min = 0.0, motion_angle_max = 180.0;
  double noise_strength_min = 5.0 / 255.0, noise_strength_max = 25.0 / 255.0;
  double poisson_peak_min = 30.0, poisson_peak_max = 300.0;
  int jpeg_quality_min = 30, jpeg_quality_max = 85;
  int lr_factor_min = 2, lr_factor_max = 8;
  double full_stage_probability = 0.75;
  jpeg::Subsampling subsampling = jpeg::Subsampling::k444;
};

struct Options {
  Ranges ranges;
  std::optional<int> lr_factor;                 // forces the LR factor
  std::optional<std::array<bool, 4>> full_stages;  // forces the Full subset (blur, resize, noise, jpeg)
};

// ---- primitive operations ---------------------------------------------------

std::vector<double> gaussian_kernel(double sigma);  // size 2 ceil(3 sigma) + 1, sums to 1
ImageTensor gaussian_blur(const ImageTensor& img, double sigma);

/// Square kernel (returned with its side length) for a 1-px line of the
/// given length and angle, bilinearly rasterized and normalized.
std::pair<std::vector<double>, std::size_t> motion_kernel(int length, double angle_degrees);
ImageTensor motion_blur(const ImageTensor& img, int length, double angle_degrees);

ImageTensor add_noise(const ImageTensor& img, NoiseFamily family, double strength, Rng& rng);

/// Cubic convolution (a = -0.5), half-pixel centres, clamped edges.
ImageTensor bicubic_resize(const ImageTensor& img, std::size_t out_w, std::size_t out_h);

ImageTensor jpeg_roundtrip(const ImageTensor& img, int quality,
                           jpeg::Subsampling subsampling = jpeg::Subsampling::k444);

// ---- settings ---------------------------------------------------------------

DegradationSpec sample(Setting setting, std::uint64_t seed, std::size_t width, std::size_t height,
                       const Options& options = {});
/// Replays a spec; output is bit-identical for identical (img, spec).
ImageTensor apply(const ImageTensor& hq, const DegradationSpec& spec);
std::pair<ImageTensor, DegradationSpec> degrade(const ImageTensor& hq, Setting setting, std::uint64_t seed,
                                                const Options& options = {});

struct SynthesizeResult {
  Manifest manifest;
  std::size_t failures = 0;
};

/// Degrades every image of hq_dir (sorted by filename; image i uses seed
/// derive_seed(global_seed, i)), writes out_dir/lq/<id>.ppm and
/// out_dir/manifest.jsonl. Throws ParameterError listing files whose size
/// differs from the first image.
SynthesizeResult synthesize(const std::filesystem::path& hq_dir, Setting setting, std::uint64_t global_seed,
                            const std::filesystem::path& out_dir, const Options& options = {});

}  // namespace bfr::degrade
