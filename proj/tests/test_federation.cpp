#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "bfl/config.hpp"
#include "bfl/federation.hpp"
#include "bfl/gaussian_io.hpp"
#include "helpers.hpp"

using namespace bfl;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.dataset.n_per_class = 40;
  cfg.dataset.n_test_per_class = 20;
  cfg.partition.n_clients = 3;
  cfg.partition.min_shard = 5;
  cfg.federation.rounds = 3;
  cfg.federation.local_epochs = 2;
  cfg.federation.batch_size = 16;
  cfg.model.hidden = {8};
  return cfg;
}

ClientState make_client(const Dataset& shard, const MlpSpec& spec, std::uint64_t seed) {
  ClientState c;
  c.train_shard = shard;
  c.ess = static_cast<std::int64_t>(shard.size());
  IvonHyper h;
  h.ess = c.ess;
  h.beta2 = 0.999;
  c.optimizer = ivon_init(param_count(spec), h, seed,
                          [&](std::size_t, std::uint64_t s) { return glorot_init(spec, s); });
  return c;
}

LocalTraining plan_for(const MlpSpec& spec, int epochs) {
  LocalTraining p;
  p.spec = spec;
  p.epochs = epochs;
  p.batch_size = 16;
  p.total_epochs = std::max(epochs, 1);
  return p;
}

bool same_report(const ExperimentReport& a, const ExperimentReport& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i].metrics, &y = b.rows[i].metrics;
    if (x.accuracy != y.accuracy || x.ece != y.ece || x.nll != y.nll) return false;
  }
  return *a.global_posterior == *b.global_posterior;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("client update with zero epochs returns the broadcast posterior") {
  const MlpSpec spec{{2, 4, 3}};
  const Dataset ds = synth_blobs(20, 3, 2, 0.5, 1);
  ClientState c = make_client(ds, spec, 3);
  Vector m = glorot_init(spec, 9);
  const DiagGaussian global(m, Vector::Constant(m.size(), 1e-3));
  std::mt19937_64 rng(1);
  const ClientState out = client_update(c, global, plan_for(spec, 0), rng);
  REQUIRE(out.local_posterior.has_value());
  CHECK(out.local_posterior->mean() == global.mean());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    CHECK(test::rel_err(out.local_posterior->var()[i], global.var()[i]) < 1e-12);
  }
}

TEST_CASE("client update is deterministic and lowers the training NLL") {
  const MlpSpec spec{{2, 8, 3}};
  const Dataset ds = synth_blobs(50, 3, 2, 0.4, 2);
  ClientState c = make_client(ds, spec, 4);
  const DiagGaussian start = posterior_of(c.optimizer);
  std::mt19937_64 r1(5), r2(5);
  LocalTraining plan = plan_for(spec, 30);
  const ClientState a = client_update(c, start, plan, r1);
  const ClientState b = client_update(c, start, plan, r2);
  CHECK(*a.local_posterior == *b.local_posterior);
  REQUIRE(a.epoch_nll.size() == 30);
  const double first = (a.epoch_nll[0] + a.epoch_nll[1] + a.epoch_nll[2]) / 3;
  const double last = (a.epoch_nll[27] + a.epoch_nll[28] + a.epoch_nll[29]) / 3;
  CHECK(last < first);
}

TEST_CASE("server aggregation examples") {
  const std::int64_t equal[] = {50, 50};
  const DiagGaussian two[] = {test::g1(0, 1), test::g1(0, 9)};
  auto s = make_server(AggregationMethod::EAA, equal, test::g1(0, 1));
  s = server_aggregate(s, two);
  CHECK(s.global_posterior.var()[0] == doctest::Approx(5.0));
  CHECK(s.round == 1);

  const std::int64_t unequal[] = {100, 300};
  const DiagGaussian means[] = {test::g1(0, 1), test::g1(4, 1)};
  auto u = make_server(AggregationMethod::EAA, unequal, test::g1(0, 1));
  CHECK(u.client_weights[0] == 0.25);
  u = server_aggregate(u, means);
  CHECK(u.global_posterior.mean()[0] == doctest::Approx(3.0));

  const auto p = test::gd({1, 2}, {0.5, 0.25});
  const DiagGaussian same[] = {p, p, p};
  const std::int64_t three[] = {10, 20, 30};
  for (auto m : {AggregationMethod::EAA, AggregationMethod::W2B, AggregationMethod::RKLB}) {
    const auto g = server_aggregate(make_server(m, three, p), same).global_posterior;
    CHECK((g.mean() - p.mean()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((g.var() - p.var()).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("aggregation weights are proportional to shard sizes") {
  const std::int64_t sizes[] = {7, 13, 101, 3};
  const auto s = make_server(AggregationMethod::W2B, sizes, test::g1(0, 1));
  const double sum = std::accumulate(s.client_weights.begin(), s.client_weights.end(), 0.0);
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  for (int k = 0; k < 4; ++k) CHECK(s.client_weights[k] == doctest::Approx(sizes[k] / 124.0));
}

TEST_CASE("personalization endpoints, toy example and zero model calls") {
  const std::int64_t sizes[] = {10, 10};
  auto server = make_server(AggregationMethod::W2B, sizes, test::g1(0, 1));
  const DiagGaussian locals[] = {test::g1(4, 9), test::g1(-2, 0.25)};
  const auto before = model_call_count();
  const auto at0 = personalize_all(server, locals, Divergence::W2SQ, Lambda(0.0));
  const auto atinf = personalize_all(server, locals, Divergence::W2SQ, Lambda::infinity());
  const auto at1 = personalize_all(server, locals, Divergence::W2SQ, Lambda(1.0));
  CHECK(model_call_count() == before);
  for (int k = 0; k < 2; ++k) {
    CHECK(at0[k] == server.global_posterior);
    CHECK(atinf[k] == locals[k]);
  }
  // Two-point W2 barycenter by hand: mean (0+4)/2, sd (1+3)/2.
  CHECK(at1[0].mean()[0] == 2.0);
  CHECK(at1[0].var()[0] == 4.0);
  // mean (0-2)/2, sd (1+0.5)/2
  CHECK(at1[1].mean()[0] == -1.0);
  CHECK(at1[1].var()[0] == 0.5625);
}

TEST_CASE("single client federation tracks the local model") {
  ExperimentConfig cfg = small_config();
  cfg.partition.n_clients = 1;
  for (const char* m : {"EAA", "W2B", "RKLB"}) {
    cfg.federation.aggregation = m;
    const auto r = run_experiment(cfg, 1);
    REQUIRE(r.local_posteriors.size() == 1);
    const auto& g = *r.global_posterior;
    const auto& l = r.local_posteriors[0];
    CHECK((g.mean() - l.mean()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(((g.var() - l.var()).array() / l.var().array()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("experiment emits all four settings and replays exactly") {
  const ExperimentConfig cfg = small_config();
  const auto a = run_experiment(cfg, 7);
  std::map<std::string, int> count;
  for (const auto& r : a.rows) ++count[r.setting];
  CHECK(count["GM-GD"] == 1);
  CHECK(count["GM-LD"] >= 1);
  CHECK(count["PM-LD"] >= 1);
  CHECK(count["PM-GD"] >= 1);
  CHECK(a.rounds.size() == 3);
  CHECK(same_report(a, run_experiment(cfg, 7)));
}

TEST_CASE("parallel clients are bit identical to sequential clients") {
  ExperimentConfig cfg = small_config();
  const auto seq = run_experiment(cfg, 3);
  cfg.federation.parallel = true;
  cfg.federation.threads = 3;
  const auto par = run_experiment(cfg, 3);
  CHECK(same_report(seq, par));
  for (std::size_t k = 0; k < seq.local_posteriors.size(); ++k) {
    CHECK(seq.local_posteriors[k] == par.local_posteriors[k]);
  }
}

TEST_CASE("lambda zero rows equal the global-model rows") {
  const auto r = run_experiment(small_config(), 2);
  std::map<std::string, double> gm, pm;
  for (const auto& row : r.rows) {
    if (row.setting == "GM-LD") gm[row.client_id] = row.metrics.accuracy;
    if (row.setting == "PM-LD" && row.lambda == "0") pm[row.client_id] = row.metrics.accuracy;
  }
  CHECK(!gm.empty());
  CHECK(gm == pm);
}

TEST_CASE("divergence to the local model shrinks along the lambda grid") {
  const ExperimentConfig cfg = small_config();
  const auto r = run_experiment(cfg, 4);
  const auto& grid = cfg.personalization.lambdas;
  const Divergence d = cfg.divergence();
  for (const auto& local : r.local_posteriors) {
    const auto path = geodesic_sweep(d, *r.global_posterior, local, grid);
    for (std::size_t j = 1; j < path.size(); ++j) {
      CHECK(divergence(d, path[j], local) <= divergence(d, path[j - 1], local) + 1e-12);
    }
  }
}

TEST_CASE("FedAvg baseline") {
  ExperimentConfig cfg = small_config();
  cfg.federation.rounds = 5;
  const auto f = fedavg_baseline(cfg, 1);
  CHECK(f.method == "FedAvg");
  for (const auto& l : f.local_posteriors) CHECK(l.var().maxCoeff() == cfg.fedavg.variance);

  // With equal variances all three rules reduce to averaging the means.
  const std::vector<double> w = {0.2, 0.3, 0.5};
  const auto a = aggregate(AggregationMethod::EAA, f.local_posteriors, w);
  const auto b = aggregate(AggregationMethod::W2B, f.local_posteriors, w);
  const auto c = aggregate(AggregationMethod::RKLB, f.local_posteriors, w);
  CHECK((a.mean() - b.mean()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.mean() - c.mean()).cwiseAbs().maxCoeff() < 1e-12);

  double fed_gm = 0, bayes_gm = 0;
  const auto bayes = run_experiment(cfg, 1);
  for (const auto& r : f.rows) if (r.setting == "GM-GD") fed_gm = r.metrics.accuracy;
  for (const auto& r : bayes.rows) if (r.setting == "GM-GD") bayes_gm = r.metrics.accuracy;
  CHECK(std::abs(fed_gm - bayes_gm) <= 5.0 + 1e-9);
}

TEST_CASE("FedAvg with identical clients matches single-node training") {
  // Same data on every client: averaging identical means is the identity.
  const MlpSpec spec{{2, 4, 3}};
  const Dataset ds = synth_blobs(20, 3, 2, 0.5, 1);
  LocalTraining plan = plan_for(spec, 3);
  plan.keep_hessian = true;
  plan.frozen_variance = 1e-8;
  auto make = [&] {
    ClientState c = make_client(ds, spec, 3);
    c.optimizer.hyper.freeze_hessian = true;
    c.optimizer.hyper.sample_noise = false;
    return c;
  };
  ClientState solo = make(), a = make(), b = make();
  std::mt19937_64 r0(1), r1(1), r2(1);
  local_train(solo, plan, r0);
  local_train(a, plan, r1);
  local_train(b, plan, r2);
  const DiagGaussian both[] = {*a.local_posterior, *b.local_posterior};
  const double half[] = {0.5, 0.5};
  CHECK(aggregate(AggregationMethod::EAA, both, half).mean() == solo.local_posterior->mean());
}

TEST_CASE("runtime failures carry round and client context") {
  const ExperimentError e(3, 7, "boom");
  CHECK(std::string(e.what()) == "round 3, client 7: boom");
  CHECK(e.round() == 3);
  CHECK(e.client() == 7);
}

TEST_CASE("summary gives mean and spread across clients") {
  MetricRow a, b;
  a.setting = b.setting = "PM-LD";
  a.method = b.method = "W2B";
  a.lambda = b.lambda = "1";
  a.metrics.accuracy = 60;
  b.metrics.accuracy = 80;
  const auto s = summarize({a, b});
  REQUIRE(s.size() == 1);
  CHECK(s[0].clients == 2);
  CHECK(s[0].acc_mean == 70.0);
  CHECK(s[0].acc_std == doctest::Approx(std::sqrt(200.0)));
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("defaults follow the optimizer table") {
  const ExperimentConfig cfg;
  CHECK(cfg.optimizer.lr_initial == 0.1);
  CHECK(cfg.optimizer.lr_final == 0.01);
  CHECK(cfg.optimizer.weight_decay == 2e-4);
  CHECK(cfg.federation.batch_size == 64);
  CHECK(cfg.optimizer.mc_train == 1);
  CHECK(cfg.eval.mc_samples == 10);
  CHECK(cfg.eval.ece_bins == 15);
  CHECK(cfg.personalization.lambdas.back().is_infinite());
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("json round trip and lambda grid parsing") {
  const auto j = nlohmann::json::parse(R"({
    "personalization": {"lambdas": [0, 0.5, "inf"], "report_lambda": 0.5},
    "federation": {"aggregation": "RKLB", "rounds": 4},
    "seeds": [1, 2]})");
  const ExperimentConfig cfg = config_from_json(j);
  CHECK(cfg.personalization.lambdas.size() == 3);
  CHECK(cfg.personalization.lambdas[2].is_infinite());
  CHECK(cfg.aggregation() == AggregationMethod::RKLB);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
  const ExperimentConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("config errors name the offending field") {
  auto field_of = [](const char* text) -> std::string {
    try {
      config_from_json(nlohmann::json::parse(text)).validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return "";
  };
  CHECK(field_of(R"({"federation": {"roundz": 3}})") == "federation.roundz");
  CHECK(field_of(R"({"dataset": {"name": "idx"}})") == "dataset.train_images");
  CHECK(field_of(R"({"federation": {"aggregation": "median"}})") == "federation.aggregation");
  CHECK(field_of(R"({"personalization": {"lambdas": [1, 0.5]}})") == "personalization.lambdas");
  CHECK(field_of(R"({"personalization": {"lambdas": [-1]}})").rfind("personalization.lambdas", 0) == 0);
  CHECK(field_of(R"({"partition": {"beta": 0}})") == "partition.beta");
  CHECK(field_of(R"({"federation": {"rounds": "many"}})") == "federation.rounds");
  CHECK(field_of(R"({"personalization": {"divergence": "KL"}})") == "personalization.divergence");
}

}  // TEST_SUITE
