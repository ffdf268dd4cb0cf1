#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bfl/config.hpp"
#include "bfl/data.hpp"
#include "bfl/eval.hpp"
#include "bfl/geometry.hpp"
#include "bfl/mlp.hpp"
#include "bfl/variopt.hpp"

namespace bfl {

struct ClientState {
  int id = 0;
  Dataset train_shard;
  Dataset test_shard;
  IvonState optimizer;
  std::optional<DiagGaussian> local_posterior;
  std::int64_t ess = 0;  // train_shard.size()

  // Filled by the last local phase.
  std::vector<double> epoch_nll;
  double neg_elbo = 0.0;
};

/// Server side of the simulation. Holds posteriors and weights only; no
/// operation here accepts a Dataset.
struct ServerState {
  DiagGaussian global_posterior;
  int round = 0;
  AggregationMethod method = AggregationMethod::W2B;
  std::vector<double> client_weights;  // N_k / sum_j N_j
};

ServerState make_server(AggregationMethod method, std::span<const std::int64_t> shard_sizes,
                        DiagGaussian initial_global);

/// Local training plan for one phase.
struct LocalTraining {
  MlpSpec spec;
  int epochs = 1;
  int batch_size = 64;
  int mc_train = 1;
  LrSchedule schedule;
  std::int64_t epoch_offset = 0;  // global epoch index of this phase's first epoch
  std::int64_t total_epochs = 1;  // horizon of the learning-rate schedule
  // Keeps the Hessian at its current value instead of reconstructing it from
  // the broadcast covariance (FedAvg baseline).
  bool keep_hessian = false;
  // Overrides posterior_of() for the reported local posterior (FedAvg).
  std::optional<double> frozen_variance;
};

/// Minibatch variational training on the client's shard, starting from the
/// client's current optimizer state.
void local_train(ClientState& client, const LocalTraining& plan, std::mt19937_64& rng);

/// Installs the broadcast posterior (mean and reconstructed Hessian using
/// the client's own N_k and weight decay), then trains locally.
ClientState client_update(ClientState client, const DiagGaussian& global,
                          const LocalTraining& plan, std::mt19937_64& rng);

ServerState server_aggregate(ServerState server, std::span<const DiagGaussian> posteriors);

/// Training-free personalization: project(d, p_g, p_k, lambda) per client.
std::vector<DiagGaussian> personalize_all(const ServerState& server,
                                          std::span<const DiagGaussian> local_posteriors,
                                          Divergence d, const Lambda& lambda);

/// Shards and model shape for one seed.
struct FederatedData {
  MlpSpec spec;
  std::vector<Dataset> train_shards;
  std::vector<Dataset> test_shards;
  Dataset global_test;
  Partition partition;
};

FederatedData prepare_federated_data(const ExperimentConfig& cfg, std::uint64_t seed);

/// Train/test pair before partitioning.
std::pair<Dataset, Dataset> load_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

struct RoundReport {
  int round = 0;
  std::vector<std::vector<double>> client_epoch_nll;
  std::vector<double> client_neg_elbo;
  double aggregation_seconds = 0.0;
  std::vector<double> divergence_to_global;  // D(p_k || p_g)
};

struct MetricRow {
  std::string setting;    // PM-LD, PM-GD, GM-LD, GM-GD
  std::string method;     // aggregation method, or FedAvg
  std::string lambda;     // "NA" for global-model rows
  std::string client_id;  // client index or "global"
  std::uint64_t seed = 0;
  int round = 0;
  MetricsReport metrics;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::string method;
  std::vector<RoundReport> rounds;
  std::vector<MetricRow> rows;            // final-round metrics
  std::vector<MetricRow> per_round_rows;  // only with personalization.every_round
  std::vector<std::size_t> train_sizes;
  std::optional<DiagGaussian> global_posterior;
  std::vector<DiagGaussian> local_posteriors;
};

/// Error raised inside the simulation with {round, client} context.
class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(int round, int client, const std::string& what)
      : std::runtime_error("round " + std::to_string(round) + ", client " +
                           std::to_string(client) + ": " + what),
        round_(round),
        client_(client) {}
  int round() const noexcept { return round_; }
  int client() const noexcept { return client_; }

 private:
  int round_;
  int client_;
};

/// Rounds of {broadcast, local training, aggregation}, then a lambda sweep
/// and the four evaluation settings.
ExperimentReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

/// Deterministic baseline: frozen variance and Hessian, noise-free training,
/// mean averaging. Personalized rows are the clients' local models.
ExperimentReport fedavg_baseline(const ExperimentConfig& cfg, std::uint64_t seed);

struct SummaryRow {
  std::string setting, method, lambda;
  std::uint64_t seed = 0;
  std::size_t clients = 0;
  double acc_mean = 0, acc_std = 0, ece_mean = 0, ece_std = 0, nll_mean = 0, nll_std = 0;
};

/// Mean and standard deviation across clients per (setting, method, lambda).
std::vector<SummaryRow> summarize(const std::vector<MetricRow>& rows);

}  // namespace bfl
