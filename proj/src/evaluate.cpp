#include "bfr/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "bfr/error.hpp"
#include "bfr/metrics.hpp"
#include "bfr/rng.hpp"

namespace bfr {

namespace {

bool wants(const EvalOptions& o, Metric m) {
  return std::find(o.metrics.begin(), o.metrics.end(), m) != o.metrics.end();
}

std::map<std::string, std::filesystem::path> by_id(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& p : list_images(dir)) out.emplace(image_id(p), p);
  return out;
}

std::string config_hash(const EvalOptions& o) {
  std::string key = "v" + std::string(kToolkitVersion);
  for (Metric m : o.metrics) key += std::string(";") + metric_name(m);
  key += ";scales=" + std::to_string(o.ms_ssim_scales);
  if (o.niqe_model) key += ";niqe=" + o.niqe_model->corpus_hash + "/" + std::to_string(o.niqe_model->patch);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

}  // namespace

EvalReport evaluate(const std::filesystem::path& restored_dir, const std::filesystem::path& gt_dir,
                    const EvalOptions& options) {
  if (options.metrics.empty()) throw ParameterError("no metrics requested");
  if (wants(options, Metric::Niqe) && !options.niqe_model)
    throw ParameterError("niqe requested without a NIQE model (--niqe-model)");
  if (wants(options, Metric::Afld) && (!options.landmarks || !options.gt_landmarks))
    throw ParameterError("afld requested without both restored and ground-truth landmark files");
  if (wants(options, Metric::Afics) && (!options.embeddings || !options.gt_embeddings))
    throw ParameterError("afics requested without both restored and ground-truth embedding files");
  if (!std::filesystem::is_directory(restored_dir)) throw IoError("not a directory: " + restored_dir.string());
  if (!std::filesystem::is_directory(gt_dir)) throw IoError("not a directory: " + gt_dir.string());

  std::map<std::string, metrics::LandmarkSet> lm, gt_lm;
  std::map<std::string, metrics::IdEmbedding> emb, gt_emb;
  if (wants(options, Metric::Afld)) {
    lm = metrics::read_landmarks(*options.landmarks);
    gt_lm = metrics::read_landmarks(*options.gt_landmarks);
  }
  if (wants(options, Metric::Afics)) {
    emb = metrics::read_embeddings(*options.embeddings);
    gt_emb = metrics::read_embeddings(*options.gt_embeddings);
  }

  EvalReport report;
  report.metrics = options.metrics;
  report.config_hash = config_hash(options);

  const auto restored = by_id(restored_dir);
  const auto gt = by_id(gt_dir);
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;
  std::vector<std::string> ids;
  for (const auto& [id, path] : restored) {
    auto it = gt.find(id);
    if (it == gt.end()) {
      report.errors.push_back({id, "no ground-truth image for restored " + path.filename().string()});
      continue;
    }
    pairs.emplace_back(path, it->second);
    ids.push_back(id);
  }
  for (const auto& [id, path] : gt)
    if (!restored.count(id)) report.errors.push_back({id, "no restored image for ground truth " + path.filename().string()});

  for (const auto& id : ids) {
    if (wants(options, Metric::Afld) && (!lm.count(id) || !gt_lm.count(id)))
      report.warnings.push_back("afld skipped for '" + id + "': landmarks missing");
    if (wants(options, Metric::Afics) && (!emb.count(id) || !gt_emb.count(id)))
      report.warnings.push_back("afics skipped for '" + id + "': embeddings missing");
  }

  std::vector<ReportRow> rows(pairs.size());
  std::vector<std::string> failures(pairs.size());
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::string& id = ids[i];
    ReportRow& row = rows[i];
    row.id = id;
    try {
      const ImageTensor a = load_image(pairs[i].first);
      const ImageTensor b = load_image(pairs[i].second);
      if (!a.same_dims(b))
        throw DimensionError("size mismatch: restored " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                             " vs ground truth " + std::to_string(b.width) + "x" + std::to_string(b.height));
      for (Metric m : options.metrics) {
        switch (m) {
          case Metric::Psnr: row[m] = metrics::psnr(a, b).value; break;
          case Metric::Ssim: row[m] = metrics::ssim(a, b).value; break;
          case Metric::MsSsim: row[m] = metrics::ms_ssim(a, b, options.ms_ssim_scales).value; break;
          case Metric::Niqe: row[m] = niqe::score(a, *options.niqe_model).value; break;
          case Metric::Afld:
            if (lm.count(id) && gt_lm.count(id)) row[m] = metrics::afld(lm.at(id), gt_lm.at(id), b.width, b.height).value;
            break;
          case Metric::Afics:
            if (emb.count(id) && gt_emb.count(id)) row[m] = metrics::afics(emb.at(id), gt_emb.at(id)).value;
            break;
        }
      }
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (failures[i].empty())
      report.rows.push_back(std::move(rows[i]));
    else
      report.errors.push_back({ids[i], failures[i]});
  }
  report.sort();
  return report;
}

}  // namespace bfr
