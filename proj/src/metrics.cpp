#include "bfr/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "bfr/error.hpp"
#include "bfr/kernels.hpp"

namespace bfr::metrics {

namespace {

constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);
constexpr std::size_t kWindow = 11;

void require_same(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_dims(b))
    throw DimensionError(std::string(what) + ": image dimensions differ (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                         std::to_string(b.channels) + ")");
}

// 8-bit plane as doubles on the 0..255 scale.
std::vector<double> quantized_plane(const ImageTensor& img, std::size_t c) {
  std::vector<double> p(img.width * img.height);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = quantize(img.data[i * img.channels + c]);
  return p;
}

struct Plane {
  std::size_t w = 0, h = 0;
  std::vector<double> v;
};

struct SsimParts {
  double ssim = 0.0;  // mean of l * cs
  double cs = 0.0;    // mean of cs
};

SsimParts ssim_parts(const Plane& a, const Plane& b) {
  const auto win = ssim_window();
  const std::size_t oh = a.h - kWindow + 1, ow = a.w - kWindow + 1, n = oh * ow;
  std::vector<double> aa(a.v.size()), bb(a.v.size()), ab(a.v.size());
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa[i] = a.v[i] * a.v[i];
    bb[i] = b.v[i] * b.v[i];
    ab[i] = a.v[i] * b.v[i];
  }
  std::vector<double> mu_a(n), mu_b(n), s_aa(n), s_bb(n), s_ab(n);
  kernels::filter_separable_valid(a.h, a.w, a.v, win, mu_a);
  kernels::filter_separable_valid(a.h, a.w, b.v, win, mu_b);
  kernels::filter_separable_valid(a.h, a.w, aa, win, s_aa);
  kernels::filter_separable_valid(a.h, a.w, bb, win, s_bb);
  kernels::filter_separable_valid(a.h, a.w, ab, win, s_ab);
  double sum_ssim = 0.0, sum_cs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double va = s_aa[i] - mu_a[i] * mu_a[i];
    const double vb = s_bb[i] - mu_b[i] * mu_b[i];
    const double cov = s_ab[i] - mu_a[i] * mu_b[i];
    const double l = (2.0 * mu_a[i] * mu_b[i] + kC1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1);
    const double cs = (2.0 * cov + kC2) / (va + vb + kC2);
    sum_ssim += l * cs;
    sum_cs += cs;
  }
  return {sum_ssim / static_cast<double>(n), sum_cs / static_cast<double>(n)};
}

Plane halve(const Plane& p) {
  Plane out{p.w / 2, p.h / 2, {}};
  out.v.resize(out.w * out.h);
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) {
      const std::size_t i = 2 * y * p.w + 2 * x;
      out.v[y * out.w + x] = 0.25 * (p.v[i] + p.v[i + 1] + p.v[i + p.w] + p.v[i + p.w + 1]);
    }
  return out;
}

}  // namespace

std::vector<double> ssim_window() {
  std::vector<double> k(kWindow);
  double s = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

MetricValue psnr(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(quantize(a.data[i])) - static_cast<double>(quantize(b.data[i]));
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  const double value = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(255.0 * 255.0 / mse);
  return {"psnr", value, true};
}

MetricValue ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b, "ssim");
  if (a.width < kWindow || a.height < kWindow)
    throw ParameterError("ssim: images must be at least 11x11, got " + std::to_string(a.width) + "x" +
                         std::to_string(a.height));
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    const Plane pa{a.width, a.height, quantized_plane(a, c)}, pb{b.width, b.height, quantized_plane(b, c)};
    total += ssim_parts(pa, pb).ssim;
  }
  return {"ssim", total / static_cast<double>(a.channels), true};
}

MetricValue ms_ssim(const ImageTensor& a, const ImageTensor& b, int scales) {
  require_same(a, b, "ms_ssim");
  if (scales < 1 || scales > kMsSsimScales) throw ParameterError("ms_ssim: scales must be in 1..5");
  const std::size_t need = kWindow << (scales - 1);
  if (std::min(a.width, a.height) < need)
    throw ParameterError("ms_ssim: " + std::to_string(scales) + " scales need images of at least " +
                         std::to_string(need) + "x" + std::to_string(need) + ", got " + std::to_string(a.width) +
                         "x" + std::to_string(a.height) + "; pass a smaller scale count");
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    Plane pa{a.width, a.height, quantized_plane(a, c)}, pb{b.width, b.height, quantized_plane(b, c)};
    double prod = 1.0;
    for (int s = 0; s < scales; ++s) {
      const SsimParts parts = ssim_parts(pa, pb);
      const double term = s + 1 == scales ? parts.ssim : parts.cs;
      prod *= std::pow(std::max(term, 0.0), kMsSsimWeights[s] / wsum);
      if (s + 1 < scales) {
        pa = halve(pa);
        pb = halve(pb);
      }
    }
    total += prod;
  }
  return {"ms_ssim", total / static_cast<double>(a.channels), true};
}

MetricValue afld(const LandmarkSet& restored, const LandmarkSet& gt, std::size_t width, std::size_t height) {
  if (restored.points.size() != gt.points.size())
    throw PairingError("afld: landmark count mismatch for '" + gt.id + "' (" +
                       std::to_string(restored.points.size()) + " vs " + std::to_string(gt.points.size()) + ")");
  if (gt.points.empty()) throw PairingError("afld: no landmarks for '" + gt.id + "'");
  if (width == 0 || height == 0) throw ParameterError("afld: image size must be positive");
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.points.size(); ++i) {
    const double dx = (restored.points[i].x - gt.points[i].x) / static_cast<double>(width);
    const double dy = (restored.points[i].y - gt.points[i].y) / static_cast<double>(height);
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return {"afld", sum / static_cast<double>(gt.points.size()), false};
}

MetricValue afics(std::span<const double> restored, std::span<const double> gt) {
  if (restored.size() != gt.size())
    throw DimensionError("afics: embedding sizes differ (" + std::to_string(restored.size()) + " vs " +
                         std::to_string(gt.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    dot += restored[i] * gt[i];
    na += restored[i] * restored[i];
    nb += gt[i] * gt[i];
  }
  if (na == 0.0 || nb == 0.0) throw ParameterError("afics: zero-norm embedding");
  return {"afics", dot / (std::sqrt(na) * std::sqrt(nb)), true};
}

namespace {

template <typename Row, typename Parse>
std::map<std::string, Row> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Row row = parse(nlohmann::json::parse(line));
      if (rows.count(row.id)) throw PairingError(path.string() + ":" + std::to_string(lineno) + ": duplicate id '" + row.id + "'");
      rows.emplace(row.id, std::move(row));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace

std::map<std::string, LandmarkSet> read_landmarks(const std::filesystem::path& path) {
  return read_jsonl<LandmarkSet>(path, [&](const nlohmann::json& j) {
    LandmarkSet s;
    s.id = j.at("id").get<std::string>();
    for (const auto& p : j.at("points")) {
      const Point pt{p.at(0).get<double>(), p.at(1).get<double>()};
      if (!std::isfinite(pt.x) || !std::isfinite(pt.y))
        throw FormatError(path.string() + ": non-finite landmark for '" + s.id + "'");
      s.points.push_back(pt);
    }
    return s;
  });
}

std::map<std::string, IdEmbedding> read_embeddings(const std::filesystem::path& path) {
  return read_jsonl<IdEmbedding>(path, [](const nlohmann::json& j) {
    return IdEmbedding{j.at("id").get<std::string>(), j.at("vec").get<std::vector<double>>()};
  });
}

}  // namespace bfr::metrics
