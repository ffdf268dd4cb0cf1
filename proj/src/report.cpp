#include "bfl/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace bfl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

static std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt::format("{:.12g}", x);
}

Provenance make_provenance(const json& settings) {
  Provenance p;
  p.config = settings;
  p.numeric = settings;
  p.input_sha256 = sha256_hex(settings.dump());
  return p;
}

Provenance make_provenance(const ExperimentConfig& cfg) {
  Provenance p;
  p.config = config_to_json(cfg);
  p.numeric = p.config;
  p.numeric.erase("output_dir");
  if (p.numeric.contains("federation")) {
    p.numeric["federation"].erase("threads");
    p.numeric["federation"].erase("parallel");
  }
  std::string material = p.numeric.dump();
  if (cfg.dataset.name == "idx") {
    for (const auto& f : {cfg.dataset.train_images, cfg.dataset.train_labels,
                          cfg.dataset.test_images, cfg.dataset.test_labels}) {
      material += '\n';
      material += sha256_file(f);
    }
  }
  p.input_sha256 = sha256_hex(material);
  return p;
}

static std::string num(double x) { return format_number(x); }

CsvTable metrics_table(std::span<const MetricRow> rows) {
  CsvTable t{{"setting", "method", "lambda", "client_id", "seed", "acc", "ece", "nll",
              "mc_samples", "bins"},
             {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.setting, r.method, r.lambda, r.client_id, std::to_string(r.seed),
                      num(r.metrics.accuracy), num(r.metrics.ece), num(r.metrics.nll),
                      std::to_string(r.metrics.mc_samples), std::to_string(r.metrics.bins)});
  }
  return t;
}

CsvTable summary_table(std::span<const SummaryRow> rows) {
  CsvTable t{{"setting", "method", "lambda", "seed", "clients", "acc_mean", "acc_std",
              "ece_mean", "ece_std", "nll_mean", "nll_std"},
             {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.setting, r.method, r.lambda, std::to_string(r.seed),
                      std::to_string(r.clients), num(r.acc_mean), num(r.acc_std),
                      num(r.ece_mean), num(r.ece_std), num(r.nll_mean), num(r.nll_std)});
  }
  return t;
}

CsvTable rounds_table(const ExperimentReport& report) {
  CsvTable t{{"seed", "method", "round", "client_id", "final_epoch_nll", "neg_elbo",
              "divergence_to_global"},
             {}};
  for (const auto& r : report.rounds) {
    for (std::size_t k = 0; k < r.client_neg_elbo.size(); ++k) {
      const auto& nll = r.client_epoch_nll[k];
      t.rows.push_back({std::to_string(report.seed), report.method, std::to_string(r.round),
                        std::to_string(k), nll.empty() ? "nan" : num(nll.back()),
                        num(r.client_neg_elbo[k]),
                        k < r.divergence_to_global.size() ? num(r.divergence_to_global[k])
                                                          : "nan"});
    }
  }
  return t;
}

CsvTable lambda_sweep_table(std::uint64_t seed, const std::string& method,
                            std::span<const LambdaCurvePoint> points) {
  CsvTable t{{"seed", "method", "lambda", "acc_local", "ece_local", "nll_local", "acc_global",
              "ece_global", "nll_global"},
             {}};
  for (const auto& p : points) {
    t.rows.push_back({std::to_string(seed), method, p.lambda, num(p.local_acc),
                      num(p.local_ece), num(p.local_nll), num(p.global_acc), num(p.global_ece),
                      num(p.global_nll)});
  }
  return t;
}

CsvTable pvalue_table(const CompareResult& result) {
  CsvTable t{{"method_a", "method_b", "metric", "p"}, {}};
  for (const char* metric : {"acc", "ece", "nll"}) {
    const auto it = result.pvalues.find(metric);
    if (it == result.pvalues.end()) continue;
    for (const auto& pp : it->second) {
      t.rows.push_back({pp.method_a, pp.method_b, metric, pp.p ? num(*pp.p) : "degenerate"});
    }
  }
  return t;
}

CsvTable compare_scores_table(const CompareResult& result) {
  CsvTable t{{"method", "seed", "acc", "ece", "nll"}, {}};
  for (const auto& s : result.scores) {
    t.rows.push_back({s.method, std::to_string(s.seed), num(s.acc), num(s.ece), num(s.nll)});
  }
  return t;
}

CsvTable incremental_table(std::span<const IncrementalResult> results) {
  CsvTable t{{"seed", "method", "weight", "acc_a", "ece_a", "nll_a", "acc_b", "ece_b", "nll_b"},
             {}};
  for (const auto& r : results) {
    for (const auto& p : r.points) {
      t.rows.push_back({std::to_string(r.seed), r.method, num(p.weight), num(p.task_a.accuracy),
                        num(p.task_a.ece), num(p.task_a.nll), num(p.task_b.accuracy),
                        num(p.task_b.ece), num(p.task_b.nll)});
    }
  }
  return t;
}

CsvTable validation_table(const GeometryValidation& v) {
  CsvTable t{{"property", "passed", "checked", "worst", "counterexample"}, {}};
  for (const auto& r : v.results) {
    t.rows.push_back({r.name, r.passed ? "true" : "false", std::to_string(r.checked),
                      num(r.worst), r.counterexample});
  }
  return t;
}

json report_json(const ExperimentReport& report) {
  json j;
  j["seed"] = report.seed;
  j["method"] = report.method;
  j["train_sizes"] = report.train_sizes;
  json rounds = json::array();
  for (const auto& r : report.rounds) {
    rounds.push_back({{"round", r.round},
                      {"client_epoch_nll", r.client_epoch_nll},
                      {"client_neg_elbo", r.client_neg_elbo},
                      {"divergence_to_global", r.divergence_to_global},
                      {"aggregation_seconds", r.aggregation_seconds}});
  }
  j["rounds"] = std::move(rounds);
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"setting", r.setting},
                    {"method", r.method},
                    {"lambda", r.lambda},
                    {"client_id", r.client_id},
                    {"round", r.round},
                    {"acc", r.metrics.accuracy},
                    {"ece", r.metrics.ece},
                    {"nll", r.metrics.nll},
                    {"n_examples", r.metrics.n_examples}});
  }
  j["rows"] = std::move(rows);
  return j;
}

// Quotes a field when it contains a separator, quote or newline.
static std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

OutputDir::OutputDir(fs::path root, Provenance provenance, std::string command)
    : root_(std::move(root)), provenance_(std::move(provenance)), command_(std::move(command)) {
  fs::create_directories(root_);
}

void OutputDir::record(const std::string& name, std::string_view bytes) {
  const fs::path path = root_ / name;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
  files_.push_back({{"path", name}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
}

void OutputDir::write_csv(const std::string& name, const CsvTable& table) {
  std::string text = "# config: " + provenance_.numeric.dump() + "\n";
  text += "# input_sha256: " + provenance_.input_sha256 + "\n";
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    text += (i ? "," : "") + table.header[i];
  }
  text += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) text += ',';
      text += csv_field(row[i]);
    }
    text += '\n';
  }
  record(name, text);
}

void OutputDir::write_json(const std::string& name, json doc) {
  doc["provenance"] = {{"config", provenance_.config},
                       {"input_sha256", provenance_.input_sha256},
                       {"command", command_}};
  record(name, doc.dump(2) + "\n");
}

void OutputDir::write_raw(const std::string& name, std::string_view bytes) { record(name, bytes); }

void OutputDir::finish(const json& extra) {
  json manifest = {{"command", command_},
                   {"input_sha256", provenance_.input_sha256},
                   {"config", provenance_.config},
                   {"files", files_}};
  if (!extra.is_null()) manifest["extra"] = extra;
  const std::string text = manifest.dump(2) + "\n";
  std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write manifest.json");
}

}  // namespace bfl
