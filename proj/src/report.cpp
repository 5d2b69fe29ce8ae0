/* Copyright 2026 The bvlab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "bvlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <tuple>

#include "bvlab/errors.hpp"
#include "bvlab/util.hpp"

namespace bvlab {

Stat Stat::of(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  s.mean = mean;
  if (xs.size() >= 2) {
    double sq = 0.0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  return s;
}

void Report::sort_rows() {
  auto key = [](const ReportRow& r) {
    return std::tie(r.scenario, r.strategy, r.bv_merging, r.k, r.lambda, r.defense, r.lambda_ibvs,
                    r.extra);
  };
  std::stable_sort(rows.begin(), rows.end(),
                   [&](const ReportRow& a, const ReportRow& b) { return key(a) < key(b); });
  std::stable_sort(cells.begin(), cells.end(), [](const CellRecord& a, const CellRecord& b) {
    return std::tie(a.row, a.seed, a.target) < std::tie(b.row, b.seed, b.target);
  });
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "csv") return ReportFormat::kCsv;
  throw ValidationError("unknown report format \"" + s + "\"");
}

const std::vector<std::string> kReportCsvColumns = {
    "scenario", "strategy", "bv_merging", "k",       "lambda",  "defense", "lambda_ibvs",
    "seed_count", "CA_mean", "CA_std",   "BA_mean", "BA_std",  "ASR_mean", "ASR_std"};

std::string format_number(double v) {
  if (!std::isfinite(v)) throw ValidationError("cannot format a non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

namespace {

// JSON numbers are the parsed back CSV text, so both formats carry the same
// values bit for bit.
nlohmann::json num(double v) { return std::stod(format_number(v)); }

nlohmann::json opt(const std::optional<double>& v) {
  return v ? num(*v) : nlohmann::json(nullptr);
}

std::string opt_csv(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

nlohmann::json stat_json(const Stat& s) { return {{"mean", opt(s.mean)}, {"std", opt(s.std)}}; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string report_to_json(const Report& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json extra = nlohmann::json::object();
    for (const auto& [k, v] : row.extra) extra[k] = num(v);
    rows.push_back({{"scenario", row.scenario},
                    {"strategy", row.strategy},
                    {"bv_merging", row.bv_merging},
                    {"k", row.k},
                    {"lambda", num(row.lambda)},
                    {"defense", row.defense},
                    {"lambda_ibvs", num(row.lambda_ibvs)},
                    {"seed_count", row.seed_count},
                    {"repetitions", row.repetitions},
                    {"CA", stat_json(row.ca)},
                    {"BA", stat_json(row.ba)},
                    {"ASR", stat_json(row.asr)},
                    {"extra", extra}});
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"row", c.row},
                     {"seed", c.seed},
                     {"target", c.target},
                     {"CA", num(c.ca)},
                     {"BA", opt(c.ba)},
                     {"ASR", num(c.asr)}});
  }
  nlohmann::json j = {{"experiment", r.experiment},
                      {"config", r.config},
                      {"rows", rows},
                      {"cells", cells},
                      {"artifacts", r.artifacts},
                      {"extra", r.extra}};
  return j.dump(2) + "\n";
}

std::string report_to_csv(const Report& r) {
  std::ostringstream out;
  for (std::size_t i = 0; i < kReportCsvColumns.size(); ++i) {
    out << (i ? "," : "") << kReportCsvColumns[i];
  }
  out << "\n";
  for (const auto& row : r.rows) {
    out << csv_field(row.scenario) << ',' << csv_field(row.strategy) << ','
        << csv_field(row.bv_merging) << ',' << row.k << ',' << format_number(row.lambda) << ','
        << csv_field(row.defense) << ',' << format_number(row.lambda_ibvs) << ',' << row.seed_count
        << ',' << opt_csv(row.ca.mean) << ',' << opt_csv(row.ca.std) << ','
        << opt_csv(row.ba.mean) << ',' << opt_csv(row.ba.std) << ',' << opt_csv(row.asr.mean)
        << ',' << opt_csv(row.asr.std) << "\n";
  }
  return out.str();
}

void emit_report(const Report& r, ReportFormat format, const std::filesystem::path& path) {
  write_file(path, format == ReportFormat::kJson ? report_to_json(r) : report_to_csv(r));
}

std::string matrix_to_csv(const std::string& corner, const std::vector<double>& row_labels,
                          const std::vector<double>& col_labels,
                          const std::vector<std::vector<double>>& values) {
  if (values.size() != row_labels.size()) throw ValidationError("matrix rows do not match labels");
  std::ostringstream out;
  out << csv_field(corner);
  for (double c : col_labels) out << ',' << format_number(c);
  out << "\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != col_labels.size()) {
      throw ValidationError("matrix columns do not match labels");
    }
    out << format_number(row_labels[i]);
    for (double v : values[i]) out << ',' << format_number(v);
    out << "\n";
  }
  return out.str();
}

}  // namespace bvlab
