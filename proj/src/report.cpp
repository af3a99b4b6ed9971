#include "bfr/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bfr/error.hpp"
#include "bfr/metrics.hpp"
#include "json.hpp"

namespace bfr {

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Psnr: return "psnr";
    case Metric::Ssim: return "ssim";
    case Metric::MsSsim: return "ms_ssim";
    case Metric::Niqe: return "niqe";
    case Metric::Afld: return "afld";
    case Metric::Afics: return "afics";
  }
  return "?";
}

bool higher_is_better(Metric m) { return m != Metric::Niqe && m != Metric::Afld; }

std::vector<Metric> parse_metrics(const std::string& list) {
  std::array<bool, kMetricCount> want{};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    std::transform(item.begin(), item.end(), item.begin(), [](unsigned char c) { return std::tolower(c); });
    if (item == "ms-ssim") item = "ms_ssim";
    auto it = std::find_if(kAllMetrics.begin(), kAllMetrics.end(), [&](Metric m) { return item == metric_name(m); });
    if (it == kAllMetrics.end())
      throw ParameterError("unknown metric '" + item + "' (expected psnr,ssim,ms_ssim,niqe,afld,afics)");
    want[static_cast<std::size_t>(*it)] = true;
  }
  std::vector<Metric> out;
  for (Metric m : kAllMetrics)
    if (want[static_cast<std::size_t>(m)]) out.push_back(m);
  if (out.empty()) throw ParameterError("no metrics requested");
  return out;
}

void EvalReport::sort() {
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.id < b.id; });
  std::stable_sort(errors.begin(), errors.end(), [](const ReportError& a, const ReportError& b) { return a.id < b.id; });
}

Aggregate EvalReport::aggregate(Metric m) const {
  Aggregate agg;
  double sum = 0.0;
  for (const auto& row : rows) {
    const auto& v = row[m];
    if (!v) continue;
    double x = *v;
    if (m == Metric::Psnr && std::isinf(x) && x > 0) x = metrics::kPsnrCap;
    if (!std::isfinite(x)) continue;
    sum += x;
    ++agg.count;
  }
  if (agg.count > 0) agg.mean = sum / static_cast<double>(agg.count);
  return agg;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string report_csv(const EvalReport& report) {
  std::string out = "id";
  for (Metric m : kAllMetrics) out += std::string(",") + metric_name(m);
  out += "\n";
  for (const auto& row : report.rows) {
    out += row.id;
    for (Metric m : kAllMetrics) {
      out += ",";
      if (row[m]) out += format_number(*row[m]);
    }
    out += "\n";
  }
  return out;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["metadata"] = {{"version", report.version}, {"config_hash", report.config_hash}, {"psnr_cap", metrics::kPsnrCap}};
  auto names = nlohmann::ordered_json::array();
  for (Metric m : report.metrics) names.push_back(metric_name(m));
  j["metrics"] = names;
  auto aggs = nlohmann::ordered_json::object();
  for (Metric m : report.metrics) {
    const Aggregate a = report.aggregate(m);
    nlohmann::ordered_json entry;
    entry["mean"] = a.mean ? nlohmann::ordered_json(*a.mean) : nlohmann::ordered_json(nullptr);
    entry["count"] = a.count;
    entry["higher_is_better"] = higher_is_better(m);
    aggs[metric_name(m)] = entry;
  }
  j["aggregates"] = aggs;
  j["images"] = report.rows.size();
  auto errs = nlohmann::ordered_json::array();
  for (const auto& e : report.errors) errs.push_back({{"id", e.id}, {"message", e.message}});
  j["errors"] = errs;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& csv_path,
                  const std::filesystem::path& json_path) {
  write_text(csv_path, report_csv(report));
  write_text(json_path, report_json(report));
}

}  // namespace bfr
