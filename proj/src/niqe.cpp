#include "bfr/niqe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "bfr/error.hpp"
#include "bfr/kernels.hpp"
#include "bfr/rng.hpp"

namespace bfr::niqe {

double lanczos_gamma(double x) {
  static constexpr double g = 7.0;
  static constexpr double p[] = {0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
                                 771.32342877765313,   -176.61502916214059,   12.507343278686905,
                                 -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) return std::numbers::pi / (std::sin(std::numbers::pi * x) * lanczos_gamma(1.0 - x));
  x -= 1.0;
  double a = p[0];
  for (int i = 1; i < 9; ++i) a += p[i] / (x + i);
  const double t = x + g + 0.5;
  return std::sqrt(2.0 * std::numbers::pi) * std::pow(t, x + 0.5) * std::exp(-t) * a;
}

namespace {

constexpr double kGridStart = 0.2;
constexpr double kGridStep = 1e-3;
constexpr std::size_t kGridSize = 9801;  // 0.2 .. 10.0

double grid_value(std::size_t i) { return kGridStart + static_cast<double>(i) * kGridStep; }

struct RatioTables {
  std::vector<double> ggd, aggd;
  RatioTables() : ggd(kGridSize), aggd(kGridSize) {
    for (std::size_t i = 0; i < kGridSize; ++i) {
      const double a = grid_value(i);
      const double g1 = lanczos_gamma(1.0 / a), g2 = lanczos_gamma(2.0 / a), g3 = lanczos_gamma(3.0 / a);
      ggd[i] = g1 * g3 / (g2 * g2);
      aggd[i] = g2 * g2 / (g1 * g3);
    }
  }
};

const RatioTables& tables() {
  static const RatioTables t;
  return t;
}

double nearest(const std::vector<double>& table, double target) {
  std::size_t best = 0;
  double best_err = std::abs(table[0] - target);
  for (std::size_t i = 1; i < table.size(); ++i) {
    const double e = std::abs(table[i] - target);
    if (e < best_err) {
      best_err = e;
      best = i;
    }
  }
  return grid_value(best);
}

std::vector<double> gaussian7() {
  std::vector<double> k(7);
  const double sigma = 7.0 / 6.0;
  double s = 0.0;
  for (int i = 0; i < 7; ++i) {
    k[i] = std::exp(-0.5 * (i - 3) * (i - 3) / (sigma * sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

std::vector<double> halve(std::size_t h, std::size_t w, const std::vector<double>& p) {
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t i = 2 * y * w + 2 * x;
      out[y * ow + x] = 0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]);
    }
  return out;
}

// 18 features for one patch of an MSCN map.
void patch_features(const std::vector<double>& m, std::size_t width, std::size_t y0, std::size_t x0,
                    std::size_t ps, double* out) {
  std::vector<double> v;
  v.reserve(ps * ps);
  for (std::size_t y = 0; y < ps; ++y)
    for (std::size_t x = 0; x < ps; ++x) v.push_back(m[(y0 + y) * width + x0 + x]);
  const GgdFit g = fit_ggd(v);
  out[0] = g.shape;
  out[1] = g.variance;
  static constexpr int shifts[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  for (int s = 0; s < 4; ++s) {
    const int dy = shifts[s][0], dx = shifts[s][1];
    std::vector<double> prod;
    prod.reserve(ps * ps);
    for (std::size_t y = 0; y + dy < ps; ++y)
      for (std::size_t x = dx < 0 ? 1 : 0; x < ps - (dx > 0 ? 1 : 0); ++x)
        prod.push_back(m[(y0 + y) * width + x0 + x] * m[(y0 + y + dy) * width + x0 + x + dx]);
    const AggdFit a = fit_aggd(prod);
    out[2 + 4 * s] = a.shape;
    out[3 + 4 * s] = a.mean;
    out[4 + 4 * s] = a.left_variance;
    out[5 + 4 * s] = a.right_variance;
  }
}

double quantile_of(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void check_patch(int patch) {
  if (patch < 8 || patch % 2 != 0) throw ParameterError("niqe patch size must be even and >= 8");
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Gaussian moments(const std::vector<Features>& f) {
  const std::size_t n = f.size();
  Gaussian g{Eigen::VectorXd::Zero(kFeatures), Eigen::MatrixXd::Zero(kFeatures, kFeatures)};
  for (const auto& row : f)
    for (std::size_t i = 0; i < kFeatures; ++i) g.mean[i] += row[i];
  g.mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < kFeatures; ++i)
    for (std::size_t j = i; j < kFeatures; ++j) {
      double s = 0.0;
      for (const auto& row : f) s += (row[i] - g.mean[i]) * (row[j] - g.mean[j]);
      g.cov(i, j) = g.cov(j, i) = s / static_cast<double>(n - 1);
    }
  return g;
}

}  // namespace

GgdFit fit_ggd(std::span<const double> x) {
  double sq = 0.0, ab = 0.0;
  for (double v : x) {
    sq += v * v;
    ab += std::abs(v);
  }
  const double n = static_cast<double>(x.size());
  const double variance = sq / n, mean_abs = ab / n;
  const double rho = variance / (mean_abs * mean_abs);
  if (!std::isfinite(rho)) return {std::nan(""), variance};
  return {nearest(tables().ggd, rho), variance};
}

AggdFit fit_aggd(std::span<const double> x) {
  double lsq = 0.0, rsq = 0.0, ab = 0.0, sq = 0.0;
  std::size_t ln = 0, rn = 0;
  for (double v : x) {
    if (v < 0.0) {
      lsq += v * v;
      ++ln;
    } else if (v > 0.0) {
      rsq += v * v;
      ++rn;
    }
    ab += std::abs(v);
    sq += v * v;
  }
  const double n = static_cast<double>(x.size());
  const double lstd = std::sqrt(lsq / static_cast<double>(ln)), rstd = std::sqrt(rsq / static_cast<double>(rn));
  const double gh = lstd / rstd;
  const double rhat = (ab / n) * (ab / n) / (sq / n);
  const double rnorm = rhat * (gh * gh * gh + 1.0) * (gh + 1.0) / ((gh * gh + 1.0) * (gh * gh + 1.0));
  AggdFit f;
  f.left_variance = lstd * lstd;
  f.right_variance = rstd * rstd;
  if (!std::isfinite(rnorm) || ln == 0 || rn == 0) {
    f.shape = f.mean = std::nan("");
    return f;
  }
  f.shape = nearest(tables().aggd, rnorm);
  const double g1 = lanczos_gamma(1.0 / f.shape), g2 = lanczos_gamma(2.0 / f.shape),
               g3 = lanczos_gamma(3.0 / f.shape);
  f.mean = (rstd - lstd) * (g2 / g1) * std::sqrt(g1 / g3);
  return f;
}

std::vector<double> mscn(std::size_t height, std::size_t width, std::span<const double> plane,
                         std::vector<double>* local_sigma) {
  const auto k = gaussian7();
  const std::size_t n = height * width;
  std::vector<double> mu(n), sq(n), mu_sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = plane[i] * plane[i];
  kernels::filter_separable(height, width, plane, k, k, mu);
  kernels::filter_separable(height, width, sq, k, k, mu_sq);
  std::vector<double> out(n), sigma(n);
  for (std::size_t i = 0; i < n; ++i) {
    sigma[i] = std::sqrt(std::abs(mu_sq[i] - mu[i] * mu[i]));
    out[i] = (plane[i] - mu[i]) / (sigma[i] + 1.0);
  }
  if (local_sigma) *local_sigma = std::move(sigma);
  return out;
}

PatchSet extract(const ImageTensor& img, int patch) {
  check_patch(patch);
  const auto ps = static_cast<std::size_t>(patch);
  const std::size_t rows = img.height / ps, cols = img.width / ps;
  PatchSet out;
  for (std::size_t c = 0; c < img.channels; ++c) {
    std::vector<double> plane(img.width * img.height);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = quantize(img.data[i * img.channels + c]);
    std::vector<double> sigma;
    const auto m1 = mscn(img.height, img.width, plane, &sigma);
    const auto small = halve(img.height, img.width, plane);
    const auto m2 = mscn(img.height / 2, img.width / 2, small);
    for (std::size_t py = 0; py < rows; ++py)
      for (std::size_t px = 0; px < cols; ++px) {
        Features f;
        patch_features(m1, img.width, py * ps, px * ps, ps, f.data());
        patch_features(m2, img.width / 2, py * ps / 2, px * ps / 2, ps / 2, f.data() + 18);
        if (!std::all_of(f.begin(), f.end(), [](double v) { return std::isfinite(v); })) continue;
        double sharp = 0.0;
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x) sharp += sigma[(py * ps + y) * img.width + px * ps + x];
        out.features.push_back(f);
        out.sharpness.push_back(sharp / static_cast<double>(ps * ps));
      }
  }
  return out;
}

Model fit(std::span<const ImageTensor> images, int patch, double quantile) {
  check_patch(patch);
  if (images.size() < 10)
    throw FitError("niqe fit needs at least 10 pristine images, got " + std::to_string(images.size()));
  if (!(quantile >= 0.0 && quantile < 1.0)) throw ParameterError("niqe sharpness quantile must be in [0, 1)");
  std::vector<PatchSet> sets(images.size());
  const auto n = static_cast<std::ptrdiff_t>(images.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (images[i].width >= static_cast<std::size_t>(patch) && images[i].height >= static_cast<std::size_t>(patch))
      sets[i] = extract(images[i], patch);
  }
  std::vector<Features> kept;
  std::size_t total = 0;
  std::uint64_t h = kFnvBasis;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto bytes = to_bytes(images[i]);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
    const auto& s = sets[i];
    total += s.features.size();
    if (s.features.empty()) continue;
    const double threshold = quantile_of(s.sharpness, quantile);
    for (std::size_t k = 0; k < s.features.size(); ++k)
      if (s.sharpness[k] >= threshold) kept.push_back(s.features[k]);
  }
  if (kept.size() < kFeatures + 1)
    throw FitError("niqe fit kept " + std::to_string(kept.size()) + " sharp patches out of " + std::to_string(total) +
                   "; need at least " + std::to_string(kFeatures + 1));
  const Gaussian g = moments(kept);
  Model m;
  m.mean.assign(g.mean.data(), g.mean.data() + kFeatures);
  m.cov.resize(kFeatures * kFeatures);
  for (std::size_t i = 0; i < kFeatures; ++i)
    for (std::size_t j = 0; j < kFeatures; ++j) m.cov[i * kFeatures + j] = g.cov(i, j);
  m.patch = patch;
  m.quantile = quantile;
  m.patches = kept.size();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  m.corpus_hash = buf;
  return m;
}

Model fit(const std::filesystem::path& pristine_dir, int patch, double quantile) {
  std::vector<ImageTensor> images;
  for (const auto& p : list_images(pristine_dir)) images.push_back(load_image(p));
  return fit(images, patch, quantile);
}

metrics::MetricValue score(const ImageTensor& img, const Model& model) {
  if (model.mean.size() != kFeatures || model.cov.size() != kFeatures * kFeatures)
    throw FormatError("niqe model has wrong dimensions");
  const auto ps = static_cast<std::size_t>(model.patch);
  if ((img.width / ps) * (img.height / ps) * img.channels < 4)
    throw ParameterError("niqe: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " yields fewer than 4 patches of size " + std::to_string(ps));
  const PatchSet s = extract(img, model.patch);
  if (s.features.size() < 2) throw NumericError("niqe: fewer than 2 patches with finite features");
  const Gaussian g = moments(s.features);
  Eigen::MatrixXd sigma(kFeatures, kFeatures);
  Eigen::VectorXd delta(kFeatures);
  for (std::size_t i = 0; i < kFeatures; ++i) {
    delta[i] = model.mean[i] - g.mean[i];
    for (std::size_t j = 0; j < kFeatures; ++j) sigma(i, j) = 0.5 * (model.cov[i * kFeatures + j] + g.cov(i, j));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  if (eig.info() != Eigen::Success) throw NumericError("niqe: eigendecomposition failed");
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * delta;
  double d2 = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < kFeatures; ++i) {
    const double lambda = eig.eigenvalues()[i];
    if (lambda <= 1e-10) continue;
    any = true;
    d2 += proj[i] * proj[i] / lambda;
  }
  if (!any) throw NumericError("niqe: combined covariance is singular");
  const double d = std::sqrt(d2);
  if (!std::isfinite(d)) throw NumericError("niqe: non-finite distance");
  return {"niqe", d, false};
}

nlohmann::json Model::to_json() const {
  nlohmann::json cov_rows = nlohmann::json::array();
  for (std::size_t i = 0; i < kFeatures; ++i)
    cov_rows.push_back(std::vector<double>(cov.begin() + i * kFeatures, cov.begin() + (i + 1) * kFeatures));
  return {{"mean", mean},   {"cov", cov_rows},           {"patch", patch},    {"scales", scales},
          {"quantile", quantile}, {"corpus_hash", corpus_hash}, {"patches", patches}};
}

Model Model::from_json(const nlohmann::json& j) {
  Model m;
  try {
    m.mean = j.at("mean").get<std::vector<double>>();
    for (const auto& row : j.at("cov")) {
      const auto r = row.get<std::vector<double>>();
      m.cov.insert(m.cov.end(), r.begin(), r.end());
    }
    m.patch = j.at("patch").get<int>();
    m.scales = j.value("scales", 2);
    m.quantile = j.value("quantile", 0.75);
    m.corpus_hash = j.value("corpus_hash", "");
    m.patches = j.value("patches", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed niqe model: ") + e.what());
  }
  if (m.mean.size() != kFeatures || m.cov.size() != kFeatures * kFeatures)
    throw FormatError("niqe model must hold a 36-vector mean and a 36x36 covariance");
  if (m.scales != 2) throw FormatError("niqe model scales must be 2");
  check_patch(m.patch);
  return m;
}

void Model::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace bfr::niqe
