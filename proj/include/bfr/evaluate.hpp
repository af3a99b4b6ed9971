#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "bfr/niqe.hpp"
#include "bfr/report.hpp"

namespace bfr {

struct EvalOptions {
  std::vector<Metric> metrics = {Metric::Psnr, Metric::Ssim, Metric::MsSsim};
  int ms_ssim_scales = metrics::kMsSsimScales;
  std::optional<std::filesystem::path> landmarks;
  std::optional<std::filesystem::path> gt_landmarks;
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> gt_embeddings;
  std::optional<niqe::Model> niqe_model;
};

/// Pairs images by id across the two directories. Unpaired or failing images
/// land in the report's error list; ids missing from auxiliary files skip that
/// metric with a warning. Throws ParameterError when a requested metric lacks
/// its auxiliary inputs entirely.
EvalReport evaluate(const std::filesystem::path& restored_dir, const std::filesystem::path& gt_dir,
                    const EvalOptions& options);

}  // namespace bfr
