#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dcc {

inline constexpr int kReportVersion = 1;
inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kReportHeader = "metric,condition,value";

struct ReportRow {
  std::string metric;
  std::string condition;
  double value = 0.0;
};

// CSV with '#'-prefixed key=value metadata lines, then kReportHeader and one
// row per measurement. Values are printed with six decimals.
struct EvalReport {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<ReportRow> rows;

  void set_meta(const std::string& key, const std::string& value);
  const std::string* find_meta(const std::string& key) const;
  void add(std::string metric, std::string condition, double value);
  const ReportRow* find(const std::string& metric, const std::string& condition) const;

  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;
  static EvalReport parse(const std::string& csv);
};

}  // namespace dcc
