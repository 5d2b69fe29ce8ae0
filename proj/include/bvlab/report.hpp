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

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace bvlab {

/// Mean and sample standard deviation of one metric. `std` is absent when
/// fewer than two repetitions were aggregated; `mean` is absent when the
/// metric does not apply (e.g. BA without an adversary).
struct Stat {
  std::optional<double> mean;
  std::optional<double> std;

  static Stat of(const std::vector<double>& xs);
};

/// One aggregated report row: metrics plus the settings that produced them.
struct ReportRow {
  std::string scenario;
  std::string strategy;
  std::string bv_merging;
  int k = 0;
  double lambda = 0.0;
  std::string defense;
  double lambda_ibvs = 0.0;
  int seed_count = 0;
  int repetitions = 0;
  Stat ca, ba, asr;
  // Extra per-experiment fields (n_merged, lambda_bv, mean_abs_cos, ...).
  std::map<std::string, double> extra;
};

/// Metrics of a single (seed, target) cell, kept for traceability.
struct CellRecord {
  std::string row;  // label of the row the cell belongs to
  std::uint64_t seed = 0;
  int target = 0;
  double ca = 0.0;
  std::optional<double> ba;
  double asr = 0.0;
};

struct Report {
  std::string experiment;
  nlohmann::json config;  // echo of the effective configuration
  std::vector<ReportRow> rows;
  std::vector<CellRecord> cells;
  std::map<std::string, std::string> artifacts;  // artifact key -> sha256
  nlohmann::json extra = nlohmann::json::object();

  /// Orders rows by their settings tuple so the output does not depend on
  /// the order in which cells were computed.
  void sort_rows();
};

enum class ReportFormat { kJson, kCsv };
ReportFormat parse_report_format(const std::string& s);

extern const std::vector<std::string> kReportCsvColumns;

std::string report_to_json(const Report& r);
std::string report_to_csv(const Report& r);
void emit_report(const Report& r, ReportFormat format, const std::filesystem::path& path);

/// Writes a labelled matrix: first row "row\col,c0,c1,...", then one line
/// per row label.
std::string matrix_to_csv(const std::string& corner, const std::vector<double>& row_labels,
                          const std::vector<double>& col_labels,
                          const std::vector<std::vector<double>>& values);

/// Fixed-precision number formatting shared by the JSON and CSV writers.
std::string format_number(double v);

}  // namespace bvlab
