#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bfl/config.hpp"
#include "bfl/data.hpp"
#include "bfl/experiments.hpp"
#include "bfl/federation.hpp"

namespace bfl {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Deterministic text form of a double used in every CSV.
std::string format_number(double x);

/// Resolved config plus a content hash of everything that determines the
/// outputs: the config itself and any dataset files it names.
struct Provenance {
  nlohmann::json config;      // full resolved config
  nlohmann::json numeric;     // config without execution-only keys
  std::string input_sha256;
};

/// Execution-only keys (thread count, parallel flag, output directory) are
/// dropped from `numeric` so that CSVs do not depend on them.
Provenance make_provenance(const ExperimentConfig& cfg);
Provenance make_provenance(const nlohmann::json& settings);

using CsvRow = std::vector<std::string>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
};

CsvTable metrics_table(std::span<const MetricRow> rows);
CsvTable summary_table(std::span<const SummaryRow> rows);
CsvTable rounds_table(const ExperimentReport& report);
CsvTable lambda_sweep_table(std::uint64_t seed, const std::string& method,
                            std::span<const LambdaCurvePoint> points);
CsvTable pvalue_table(const CompareResult& result);
CsvTable compare_scores_table(const CompareResult& result);
CsvTable incremental_table(std::span<const IncrementalResult> results);
CsvTable validation_table(const GeometryValidation& v);

nlohmann::json report_json(const ExperimentReport& report);

/// Output directory with a manifest.json index of every file written.
class OutputDir {
 public:
  OutputDir(std::filesystem::path root, Provenance provenance, std::string command);

  const std::filesystem::path& root() const noexcept { return root_; }

  /// CSV with "# config:" and "# input_sha256:" comment lines on top.
  void write_csv(const std::string& name, const CsvTable& table);
  /// JSON document; the provenance block is added under "provenance".
  void write_json(const std::string& name, nlohmann::json doc);
  void write_raw(const std::string& name, std::string_view bytes);

  /// Writes manifest.json; call last.
  void finish(const nlohmann::json& extra = {});

 private:
  void record(const std::string& name, std::string_view bytes);

  std::filesystem::path root_;
  Provenance provenance_;
  std::string command_;
  nlohmann::json files_ = nlohmann::json::array();
};

}  // namespace bfl
