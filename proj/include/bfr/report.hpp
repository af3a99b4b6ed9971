#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bfr {

inline constexpr const char* kToolkitVersion = "0.1.0";

enum class Metric { Psnr, Ssim, MsSsim, Niqe, Afld, Afics };
inline constexpr std::size_t kMetricCount = 6;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics = {Metric::Psnr, Metric::Ssim, Metric::MsSsim,
                                                                 Metric::Niqe, Metric::Afld, Metric::Afics};

const char* metric_name(Metric m);
bool higher_is_better(Metric m);
/// Comma-separated names, returned in canonical column order without duplicates.
std::vector<Metric> parse_metrics(const std::string& list);

struct ReportRow {
  std::string id;
  std::array<std::optional<double>, kMetricCount> values;

  std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

struct ReportError {
  std::string id;
  std::string message;
};

struct Aggregate {
  std::optional<double> mean;
  std::size_t count = 0;
};

struct EvalReport {
  std::vector<Metric> metrics;
  std::vector<ReportRow> rows;
  std::vector<ReportError> errors;
  std::vector<std::string> warnings;
  std::string version = kToolkitVersion;
  std::string config_hash;

  /// Orders rows and errors by id.
  void sort();
  /// Mean of finite values; infinite PSNR enters as the 99 dB cap.
  Aggregate aggregate(Metric m) const;
};

/// Shortest decimal that round-trips; "inf" / "-inf" / "nan" for non-finite values.
std::string format_number(double v);

std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& csv_path,
                  const std::filesystem::path& json_path);

}  // namespace bfr
