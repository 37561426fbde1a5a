#include "dcc/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcc/error.hpp"

namespace dcc {

void EvalReport::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = value;
      return;
    }
  }
  meta.emplace_back(key, value);
}

const std::string* EvalReport::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

void EvalReport::add(std::string metric, std::string condition, double value) {
  if (metric.find(',') != std::string::npos || condition.find(',') != std::string::npos) {
    throw Error("report: metric and condition names cannot contain commas");
  }
  rows.push_back({std::move(metric), std::move(condition), value});
}

const ReportRow* EvalReport::find(const std::string& metric, const std::string& condition) const {
  for (const auto& r : rows) {
    if (r.metric == metric && r.condition == condition) return &r;
  }
  return nullptr;
}

std::string EvalReport::to_csv() const {
  std::string out = "# report_version=" + std::to_string(kReportVersion) + "\n";
  for (const auto& [k, v] : meta) out += "# " + k + "=" + v + "\n";
  out += std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", r.value);
    out += r.metric + "," + r.condition + "," + buf + "\n";
  }
  return out;
}

void EvalReport::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << to_csv();
}

EvalReport EvalReport::parse(const std::string& csv) {
  EvalReport r;
  std::istringstream in(csv);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos || line.size() < 2) throw DataError("report: bad metadata line '" + line + "'");
      const std::string key = line.substr(2, eq - 2);
      if (key != "report_version") r.meta.emplace_back(key, line.substr(eq + 1));
      continue;
    }
    if (!header) {
      if (line != kReportHeader) throw DataError("report: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw DataError("report: bad row '" + line + "'");
    r.rows.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
  }
  if (!header) throw DataError("report: missing header");
  return r;
}

}  // namespace dcc
