#include "bfl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "bfl/seeding.hpp"

namespace bfl {

namespace {

enum class Mode { Bayesian, FedAvg };

// Runs f(k) for every client, optionally on a small thread pool. Each call
// touches only client k, so the schedule cannot change results.
template <typename F>
void for_each_client(std::size_t n, bool parallel, int threads, F&& f) {
  if (!parallel || threads <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) f(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < n; k = next.fetch_add(1)) {
      try {
        f(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::size_t> batch_rows(const std::vector<std::size_t>& order, std::size_t start,
                                    std::size_t end) {
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::string client_label(std::size_t k) { return std::to_string(k); }

struct Evaluator {
  const ExperimentConfig& cfg;
  const FederatedData& data;
  std::uint64_t seed;
  std::string method;
  int round;

  // The MC noise depends only on which dataset is evaluated, so two equal
  // posteriors on the same data give identical metrics.
  std::uint64_t seed_for(std::size_t dataset_index) const {
    return derive_seed(seed, {stream::kEvaluation, dataset_index});
  }

  std::optional<MetricsReport> on_local(const DiagGaussian& q, std::size_t k) const {
    if (data.test_shards[k].size() == 0) return std::nullopt;
    return evaluate(data.spec, q, data.test_shards[k], cfg.eval.mc_samples, cfg.eval.ece_bins,
                    seed_for(k));
  }

  MetricsReport on_global(const DiagGaussian& q) const {
    return evaluate(data.spec, q, data.global_test, cfg.eval.mc_samples, cfg.eval.ece_bins,
                    seed_for(data.test_shards.size()));
  }

  MetricRow row(std::string setting, std::string lambda, std::string client,
                MetricsReport m) const {
    m.setting = setting;
    return {std::move(setting), method, std::move(lambda), std::move(client), seed, round,
            std::move(m)};
  }

  void global_rows(const DiagGaussian& global, std::vector<MetricRow>& out) const {
    for (std::size_t k = 0; k < data.test_shards.size(); ++k) {
      if (auto m = on_local(global, k)) out.push_back(row("GM-LD", "NA", client_label(k), *m));
    }
    out.push_back(row("GM-GD", "NA", "global", on_global(global)));
  }

  void personalized_rows(const std::vector<DiagGaussian>& personalized, const Lambda& lambda,
                         std::vector<MetricRow>& out) const {
    for (std::size_t k = 0; k < personalized.size(); ++k) {
      if (auto m = on_local(personalized[k], k)) {
        out.push_back(row("PM-LD", lambda.str(), client_label(k), *m));
      }
      out.push_back(row("PM-GD", lambda.str(), client_label(k), on_global(personalized[k])));
    }
  }
};

std::vector<Lambda> reporting_grid(const ExperimentConfig& cfg) {
  std::vector<Lambda> grid = cfg.personalization.lambdas;
  if (std::find(grid.begin(), grid.end(), cfg.personalization.report_lambda) == grid.end()) {
    grid.push_back(cfg.personalization.report_lambda);
    std::sort(grid.begin(), grid.end());
  }
  return grid;
}

ExperimentReport run_simulation(const ExperimentConfig& cfg, std::uint64_t seed, Mode mode) {
  cfg.validate();
  const FederatedData data = prepare_federated_data(cfg, seed);
  const std::size_t n_clients = data.train_shards.size();
  const std::size_t dim = param_count(data.spec);
  const bool fedavg = mode == Mode::FedAvg;
  const AggregationMethod method = fedavg ? AggregationMethod::EAA : cfg.aggregation();
  const Divergence personal_div = cfg.divergence();
  const std::string method_name = fedavg ? "FedAvg" : std::string(to_string(method));

  const Vector init_mean = glorot_init(data.spec, derive_seed(seed, {stream::kInit}));
  const MeanInitializer initializer = [&](std::size_t, std::uint64_t) { return init_mean; };

  LocalTraining plan;
  plan.spec = data.spec;
  plan.epochs = cfg.federation.local_epochs;
  plan.batch_size = cfg.federation.batch_size;
  plan.mc_train = fedavg ? 1 : cfg.optimizer.mc_train;
  plan.schedule = cfg.lr_schedule();
  plan.total_epochs = static_cast<std::int64_t>(cfg.federation.rounds) * cfg.federation.local_epochs;
  plan.keep_hessian = fedavg;
  if (fedavg) plan.frozen_variance = cfg.fedavg.variance;

  std::vector<ClientState> clients(n_clients);
  std::vector<std::int64_t> sizes(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    ClientState& c = clients[k];
    c.id = static_cast<int>(k);
    c.train_shard = data.train_shards[k];
    c.test_shard = data.test_shards[k];
    c.ess = static_cast<std::int64_t>(c.train_shard.size());
    sizes[k] = c.ess;
    IvonHyper hyper = cfg.ivon_hyper(c.ess);
    if (fedavg) {
      hyper.freeze_hessian = true;
      hyper.sample_noise = false;
    }
    c.optimizer = ivon_init(dim, hyper, seed, initializer);
    c.local_posterior = fedavg ? DiagGaussian(init_mean, Vector::Constant(init_mean.size(), cfg.fedavg.variance))
                               : posterior_of(c.optimizer);
  }

  auto collect = [&] {
    std::vector<DiagGaussian> locals;
    locals.reserve(n_clients);
    for (const auto& c : clients) locals.push_back(*c.local_posterior);
    return locals;
  };
  std::vector<DiagGaussian> locals = collect();
  std::vector<double> weights(n_clients);
  {
    const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    for (std::size_t k = 0; k < n_clients; ++k) weights[k] = static_cast<double>(sizes[k]) / total;
  }
  ServerState server = make_server(method, sizes, aggregate(method, locals, weights));

  ExperimentReport report;
  report.seed = seed;
  report.method = method_name;
  for (const auto& s : data.train_shards) report.train_sizes.push_back(s.size());

  for (int r = 1; r <= cfg.federation.rounds; ++r) {
    plan.epoch_offset = static_cast<std::int64_t>(r - 1) * cfg.federation.local_epochs;
    const DiagGaussian broadcast = server.global_posterior;
    for_each_client(n_clients, cfg.federation.parallel, cfg.federation.threads, [&](std::size_t k) {
      std::mt19937_64 rng(derive_seed(seed, {stream::kClientTraining, static_cast<std::uint64_t>(r), k}));
      try {
        if (r == 1) {
          local_train(clients[k], plan, rng);
        } else {
          clients[k] = client_update(std::move(clients[k]), broadcast, plan, rng);
        }
      } catch (const std::exception& e) {
        throw ExperimentError(r, static_cast<int>(k), e.what());
      }
    });
    locals = collect();

    const auto t0 = std::chrono::steady_clock::now();
    try {
      server = server_aggregate(std::move(server), locals);
    } catch (const std::exception& e) {
      throw ExperimentError(r, -1, std::string("aggregation failed: ") + e.what());
    }
    const auto t1 = std::chrono::steady_clock::now();

    RoundReport rr;
    rr.round = r;
    rr.aggregation_seconds = std::chrono::duration<double>(t1 - t0).count();
    for (const auto& c : clients) {
      rr.client_epoch_nll.push_back(c.epoch_nll);
      rr.client_neg_elbo.push_back(c.neg_elbo);
      rr.divergence_to_global.push_back(
          divergence(fedavg ? Divergence::W2SQ : personal_div, *c.local_posterior, server.global_posterior));
    }
    report.rounds.push_back(std::move(rr));

    if (cfg.personalization.every_round && r < cfg.federation.rounds && !fedavg) {
      const Evaluator ev{cfg, data, seed, method_name, r};
      const Lambda& l = cfg.personalization.report_lambda;
      ev.personalized_rows(personalize_all(server, locals, personal_div, l), l, report.per_round_rows);
    }
  }

  const Evaluator ev{cfg, data, seed, method_name, cfg.federation.rounds};
  ev.global_rows(server.global_posterior, report.rows);
  if (fedavg) {
    ev.personalized_rows(locals, Lambda::infinity(), report.rows);
  } else {
    for (const Lambda& l : reporting_grid(cfg)) {
      ev.personalized_rows(personalize_all(server, locals, personal_div, l), l, report.rows);
    }
  }
  if (cfg.personalization.every_round && !fedavg) {
    const Lambda& l = cfg.personalization.report_lambda;
    ev.personalized_rows(personalize_all(server, locals, personal_div, l), l, report.per_round_rows);
  }
  report.global_posterior = server.global_posterior;
  report.local_posteriors = std::move(locals);
  return report;
}

}  // namespace

ServerState make_server(AggregationMethod method, std::span<const std::int64_t> shard_sizes,
                        DiagGaussian initial_global) {
  if (shard_sizes.empty()) throw ContractError("make_server: no clients");
  double total = 0.0;
  for (auto n : shard_sizes) {
    if (n < 1) throw ContractError("make_server: every client needs a non-empty shard");
    total += static_cast<double>(n);
  }
  std::vector<double> weights;
  weights.reserve(shard_sizes.size());
  for (auto n : shard_sizes) weights.push_back(static_cast<double>(n) / total);
  return ServerState{std::move(initial_global), 0, method, std::move(weights)};
}

void local_train(ClientState& client, const LocalTraining& plan, std::mt19937_64& rng) {
  const std::size_t n = client.train_shard.size();
  if (n == 0) throw ContractError("local_train: empty training shard");
  if (plan.batch_size < 1) throw ContractError("local_train: batch_size must be >= 1");
  IvonState& opt = client.optimizer;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  client.epoch_nll.clear();

  std::vector<Vector> grads, thetas;
  for (int e = 0; e < plan.epochs; ++e) {
    opt.hyper.lr = plan.schedule.at(plan.epoch_offset + e, plan.total_epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double nll_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(plan.batch_size));
      const auto rows = batch_rows(order, start, end);
      const Dataset batch = subset(client.train_shard, rows);
      grads.clear();
      thetas.clear();
      double batch_nll = 0.0;
      for (int s = 0; s < plan.mc_train; ++s) {
        thetas.push_back(sample_params(opt, rng));
        LossGrad lg = loss_and_grad(plan.spec, thetas.back(), batch.inputs, batch.labels);
        batch_nll += lg.nll;
        grads.push_back(std::move(lg.grad));
      }
      ivon_step(opt, grads, thetas);
      nll_sum += batch_nll / plan.mc_train;
      ++batches;
    }
    client.epoch_nll.push_back(nll_sum / batches);
  }

  if (plan.frozen_variance) {
    client.local_posterior =
        DiagGaussian(opt.mean, Vector::Constant(opt.mean.size(), *plan.frozen_variance));
  } else {
    client.local_posterior = posterior_of(opt);
  }
  const double data_term =
      client.epoch_nll.empty() ? 0.0 : client.epoch_nll.back() * static_cast<double>(n);
  if (!plan.frozen_variance) {
    client.neg_elbo = negative_elbo(
        opt, default_prior(opt.dim(), opt.hyper.ess, opt.hyper.weight_decay), data_term);
  } else {
    client.neg_elbo = data_term;
  }
}

ClientState client_update(ClientState client, const DiagGaussian& global,
                          const LocalTraining& plan, std::mt19937_64& rng) {
  IvonState& opt = client.optimizer;
  if (global.dim() != opt.dim()) {
    throw ContractError("client_update: global posterior dimension does not match the model");
  }
  opt.mean = global.mean();
  if (!plan.keep_hessian) opt.hess = hessian_of(global, client.ess, opt.hyper.weight_decay);
  opt.grad_momentum.setZero();
  opt.step_count = 0;
  local_train(client, plan, rng);
  return client;
}

ServerState server_aggregate(ServerState server, std::span<const DiagGaussian> posteriors) {
  if (posteriors.size() != server.client_weights.size()) {
    throw ContractError("server_aggregate: expected " + std::to_string(server.client_weights.size()) +
                        " posteriors, got " + std::to_string(posteriors.size()));
  }
  server.global_posterior = aggregate(server.method, posteriors, server.client_weights);
  server.round += 1;
  return server;
}

std::vector<DiagGaussian> personalize_all(const ServerState& server,
                                          std::span<const DiagGaussian> local_posteriors,
                                          Divergence d, const Lambda& lambda) {
  std::vector<DiagGaussian> out;
  out.reserve(local_posteriors.size());
  for (const auto& local : local_posteriors) {
    out.push_back(project(d, server.global_posterior, local, lambda));
  }
  return out;
}

std::pair<Dataset, Dataset> load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  const DatasetConfig& d = cfg.dataset;
  const std::uint64_t data_seed = d.seed.value_or(derive_seed(seed, {stream::kData}));
  if (d.name == "synth_blobs") {
    const int per_class = d.n_per_class + d.n_test_per_class;
    const Dataset all = synth_blobs(per_class, d.classes, d.dim, d.spread, data_seed);
    std::vector<std::size_t> train_rows, test_rows;
    for (int c = 0; c < d.classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        const auto row = static_cast<std::size_t>(c) * per_class + i;
        (i < d.n_per_class ? train_rows : test_rows).push_back(row);
      }
    }
    return {subset(all, train_rows), subset(all, test_rows)};
  }
  Dataset train = load_idx(d.train_images, d.train_labels);
  Dataset test = load_idx(d.test_images, d.test_labels);
  const int classes = std::max(train.classes, test.classes);
  train.classes = test.classes = classes;
  if (d.train_subset > 0) train = random_subset(train, d.train_subset, derive_seed(data_seed, {1}));
  if (d.test_subset > 0) test = random_subset(test, d.test_subset, derive_seed(data_seed, {2}));
  return {std::move(train), std::move(test)};
}

FederatedData prepare_federated_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto [train, test] = load_dataset(cfg, seed);
  FederatedData data;
  data.spec.layer_sizes.push_back(train.dim());
  for (int h : cfg.model.hidden) data.spec.layer_sizes.push_back(h);
  data.spec.layer_sizes.push_back(train.classes);

  PartitionConfig pc;
  pc.n_clients = cfg.partition.n_clients;
  pc.beta = cfg.partition.beta;
  pc.seed = derive_seed(seed, {stream::kPartition});
  pc.min_shard = cfg.partition.min_shard;
  data.partition = dirichlet_partition(train, pc);

  Matrix test_proportions = data.partition.proportions;
  if (!cfg.partition.partition_test) {
    test_proportions = Matrix::Constant(train.classes, cfg.partition.n_clients,
                                        1.0 / cfg.partition.n_clients);
  }
  const auto test_split =
      split_by_proportions(test, test_proportions, derive_seed(seed, {stream::kPartition, 1}));
  for (std::size_t k = 0; k < data.partition.shards.size(); ++k) {
    data.train_shards.push_back(subset(train, data.partition.shards[k]));
    data.test_shards.push_back(subset(test, test_split[k]));
  }
  std::vector<Dataset> nonempty;
  for (const auto& t : data.test_shards) {
    if (t.size() > 0) nonempty.push_back(t);
  }
  data.global_test = concat(nonempty);
  return data;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_simulation(cfg, seed, Mode::Bayesian);
}

ExperimentReport fedavg_baseline(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_simulation(cfg, seed, Mode::FedAvg);
}

std::vector<SummaryRow> summarize(const std::vector<MetricRow>& rows) {
  std::vector<SummaryRow> out;
  std::map<std::tuple<std::string, std::string, std::string, std::uint64_t>, std::size_t> index;
  std::vector<std::vector<const MetricsReport*>> members;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.setting, r.method, r.lambda, r.seed);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({r.setting, r.method, r.lambda, r.seed});
      members.emplace_back();
    }
    members[it->second].push_back(&r.metrics);
  }
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::vector<double> acc, ece, nll;
    for (const auto* m : members[i]) {
      acc.push_back(m->accuracy);
      ece.push_back(m->ece);
      nll.push_back(m->nll);
    }
    out[i].clients = members[i].size();
    stats(acc, out[i].acc_mean, out[i].acc_std);
    stats(ece, out[i].ece_mean, out[i].ece_std);
    stats(nll, out[i].nll_mean, out[i].nll_std);
  }
  return out;
}

}  // namespace bfl
