#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bfr/autodiff.hpp"
#include "bfr/image.hpp"

namespace bfr::testing {

/// Synthetic face-like portrait: background, hair, skin ellipse, eyes, brows,
/// nose shading and mouth, with smooth edges and a little texture.
ImageTensor toy_face(std::size_t size, std::uint64_t seed);
/// Writes `count` toy faces as face_000.ppm ... into `dir`.
void write_toy_corpus(const std::filesystem::path& dir, std::size_t count, std::size_t size, std::uint64_t seed);

/// 0.5 + amplitude * sin(fx x) cos(fy y), with a per-channel phase.
ImageTensor smooth_pattern(std::size_t width, std::size_t height, double amplitude = 0.3);
/// Uniform noise in [lo, hi].
ImageTensor random_image(std::size_t width, std::size_t height, std::uint64_t seed, double lo = 0.0, double hi = 1.0);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Central-difference check of d loss / d tensor for every entry of each
/// tensor in `wrt` (or a deterministic sample of `max_per_tensor` entries).
/// `loss` must build a scalar from the current tensor values under an
/// active tape. Returns the largest relative error
/// |g - fd| / max(|g|, |fd|, floor).
struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  // location of the largest relative error
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_grad = 0.0;
  double worst_fd = 0.0;
};
GradCheck check_gradients(const std::function<ad::Tensor()>& loss, std::vector<ad::Tensor> wrt,
                          double eps = 1e-5, std::size_t max_per_tensor = 0, double floor = 1e-8);

}  // namespace bfr::testing
