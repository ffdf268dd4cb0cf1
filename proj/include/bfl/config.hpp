#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfl/geometry.hpp"
#include "bfl/variopt.hpp"

namespace bfl {

/// Invalid configuration; `field()` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct DatasetConfig {
  std::string name = "synth_blobs";  // synth_blobs | idx
  // synth_blobs
  int n_per_class = 200;
  int n_test_per_class = 100;
  int classes = 3;
  int dim = 2;
  double spread = 0.5;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t train_subset = 0;  // 0 keeps everything
  std::size_t test_subset = 0;
  std::optional<std::uint64_t> seed;  // defaults to a stream of the master seed
};

struct PartitionSection {
  int n_clients = 10;
  double beta = 0.5;
  std::size_t min_shard = 10;
  bool partition_test = true;
};

struct ModelSection {
  std::vector<int> hidden = {32};
};

struct OptimizerSection {
  double lr_initial = 0.1;
  double lr_final = 0.01;
  std::string schedule = "linear";
  double weight_decay = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99999;
  double h0 = 5.0;
  std::optional<double> clip_radius;
  int mc_train = 1;
};

struct FederationSection {
  int rounds = 20;
  int local_epochs = 1;
  int batch_size = 64;
  std::string aggregation = "W2B";
  bool parallel = false;
  int threads = 1;
};

struct PersonalizationSection {
  std::string divergence = "W2SQ";
  std::vector<Lambda> lambdas = {Lambda(0.0), Lambda(0.1), Lambda(0.25), Lambda(0.5), Lambda(1.0),
                                 Lambda(2.0), Lambda(4.0), Lambda(10.0), Lambda::infinity()};
  Lambda report_lambda = Lambda(1.0);
  bool every_round = false;
};

struct EvalSection {
  int mc_samples = 10;
  int ece_bins = 15;
};

struct FedAvgSection {
  bool enabled = false;
  double variance = 1e-8;
};

struct CompareSection {
  std::vector<std::string> methods = {"EAA", "W2B", "RKLB"};
};

struct IncrementalSection {
  std::vector<int> task_a = {0, 1, 2};
  std::vector<int> task_b = {3, 4, 5};
  int epochs = 30;
  std::string method = "W2B";
  std::vector<double> weights = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

struct ExperimentConfig {
  DatasetConfig dataset;
  PartitionSection partition;
  ModelSection model;
  OptimizerSection optimizer;
  FederationSection federation;
  PersonalizationSection personalization;
  EvalSection eval;
  FedAvgSection fedavg;
  CompareSection compare;
  IncrementalSection incremental;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "out";

  /// Semantic checks beyond parsing; throws ConfigError.
  void validate() const;

  AggregationMethod aggregation() const { return parse_aggregation(federation.aggregation); }
  Divergence divergence() const { return parse_divergence(personalization.divergence); }
  IvonHyper ivon_hyper(std::int64_t ess) const;
  LrSchedule lr_schedule() const;
};

/// Parses a config; unknown keys and type errors are ConfigErrors.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config, defaults included.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

}  // namespace bfl
