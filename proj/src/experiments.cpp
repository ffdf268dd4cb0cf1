#include "bfl/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "bfl/seeding.hpp"

namespace bfl {

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

DiagGaussian gauss1(double mean, double sd) {
  Vector m(1), v(1);
  m << mean;
  v << sd * sd;
  return DiagGaussian(m, v);
}

std::string describe(const DiagGaussian& g) {
  std::ostringstream os;
  os.precision(10);
  os << "N(" << g.mean()[0] << ", sd=" << std::sqrt(g.var()[0]) << ")";
  return os.str();
}

struct Instance {
  DiagGaussian a;
  DiagGaussian b;
  double weight;  // weight on b
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu(-2.0, 2.0);
  std::uniform_real_distribution<double> sd(0.2, 2.0);
  std::uniform_real_distribution<double> w(0.05, 0.95);
  const double m1 = mu(rng), s1 = sd(rng), m2 = mu(rng), s2 = sd(rng);
  return {gauss1(m1, s1), gauss1(m2, s2), w(rng)};
}

// Closed form under test, with the optional injected fault.
DiagGaussian closed_form(AggregationMethod method, std::span<const DiagGaussian> ps,
                         std::span<const double> ws, bool fault) {
  if (fault && method == AggregationMethod::W2B) return aggregate(AggregationMethod::EAA, ps, ws);
  return aggregate(method, ps, ws);
}

DiagGaussian closed_projection(Divergence d, const DiagGaussian& g, const DiagGaussian& k,
                               const Lambda& lambda, bool fault) {
  if (lambda.is_infinite()) return k;
  if (lambda.value() == 0.0) return g;
  const ProjectionWeights w = ProjectionWeights::from(lambda);
  const DiagGaussian pair[] = {g, k};
  const double ws[] = {w.global, w.local};
  return closed_form(barycenter_method_of(d), pair, ws, fault);
}

// Minimum of the barycenter objective over a (mean, sd) grid: a coarse grid
// over the whole box plus a step-1e-3 window around `center`.
double grid_minimum(AggregationMethod method, std::span<const DiagGaussian> ps,
                    std::span<const double> ws, const DiagGaussian& center) {
  double mu_lo = 1e300, mu_hi = -1e300, sd_lo = 1e300, sd_hi = -1e300;
  for (const auto& p : ps) {
    mu_lo = std::min(mu_lo, p.mean()[0]);
    mu_hi = std::max(mu_hi, p.mean()[0]);
    sd_lo = std::min(sd_lo, std::sqrt(p.var()[0]));
    sd_hi = std::max(sd_hi, std::sqrt(p.var()[0]));
  }
  const double mu_span = std::max(mu_hi - mu_lo, 1e-3);
  const double sd_span = std::max(sd_hi - sd_lo, 1e-3);
  double best = 1e300;
  auto eval = [&](double m, double s) {
    if (s <= 0.0) return;
    best = std::min(best, barycenter_objective(method, gauss1(m, s), ps, ws));
  };
  constexpr int kCoarse = 400;
  const double m0 = mu_lo - 3 * mu_span, m1 = mu_hi + 3 * mu_span;
  const double s0 = std::max(1e-3, sd_lo - 3 * sd_span), s1 = sd_hi + 3 * sd_span;
  for (int i = 0; i <= kCoarse; ++i) {
    for (int j = 0; j <= kCoarse; ++j) {
      eval(m0 + (m1 - m0) * i / kCoarse, s0 + (s1 - s0) * j / kCoarse);
    }
  }
  constexpr double kStep = 1e-3;
  constexpr int kHalf = 250;
  const double cm = center.mean()[0], cs = std::sqrt(center.var()[0]);
  for (int i = -kHalf; i <= kHalf; ++i) {
    for (int j = -kHalf; j <= kHalf; ++j) eval(cm + i * kStep, cs + j * kStep);
  }
  return best;
}

}  // namespace

std::vector<LambdaCurvePoint> lambda_curve(const ExperimentReport& report,
                                           const std::vector<Lambda>& grid) {
  std::vector<LambdaCurvePoint> out;
  for (const Lambda& l : grid) {
    const std::string key = l.str();
    std::vector<double> la, le, ln, ga, ge, gn;
    for (const auto& r : report.rows) {
      if (r.lambda != key) continue;
      if (r.setting == "PM-LD") {
        la.push_back(r.metrics.accuracy);
        le.push_back(r.metrics.ece);
        ln.push_back(r.metrics.nll);
      } else if (r.setting == "PM-GD") {
        ga.push_back(r.metrics.accuracy);
        ge.push_back(r.metrics.ece);
        gn.push_back(r.metrics.nll);
      }
    }
    if (la.empty() && ga.empty()) continue;
    out.push_back({key, mean_of(la), mean_of(le), mean_of(ln), mean_of(ga), mean_of(ge),
                   mean_of(gn)});
  }
  return out;
}

CompareResult compare_scores(std::vector<CompareScore> scores,
                             const std::vector<std::string>& methods) {
  CompareResult result;
  for (const char* metric : {"acc", "ece", "nll"}) {
    std::vector<std::pair<std::string, std::vector<double>>> table;
    for (const auto& m : methods) {
      std::vector<std::pair<std::uint64_t, double>> paired;
      for (const auto& s : scores) {
        if (s.method != m) continue;
        const double v = std::string(metric) == "acc" ? s.acc : std::string(metric) == "ece" ? s.ece : s.nll;
        paired.emplace_back(s.seed, v);
      }
      std::sort(paired.begin(), paired.end());
      std::vector<double> values;
      for (const auto& [seed, v] : paired) values.push_back(v);
      table.emplace_back(m, std::move(values));
    }
    // Pairing is by seed; every method must cover the same seeds.
    for (const auto& m : methods) {
      std::set<std::uint64_t> a, b;
      for (const auto& s : scores) {
        if (s.method == m) a.insert(s.seed);
        if (s.method == methods.front()) b.insert(s.seed);
      }
      if (a != b) throw ContractError("compare: method '" + m + "' is not aligned by seed");
    }
    result.pvalues[metric] = compare_aggregations(table);
  }
  result.scores = std::move(scores);
  return result;
}

CompareResult run_compare(const ExperimentConfig& cfg) {
  const auto& methods = cfg.compare.methods;
  if (methods.size() < 2) throw ConfigError("compare.methods", "need at least two methods");
  std::vector<CompareScore> scores;
  std::vector<std::string> done;
  for (const auto& m : methods) {
    if (std::find(done.begin(), done.end(), m) != done.end()) continue;
    done.push_back(m);
    ExperimentConfig run_cfg = cfg;
    run_cfg.federation.aggregation = m;
    for (std::uint64_t seed : cfg.seeds) {
      const ExperimentReport report = run_experiment(run_cfg, seed);
      for (const auto& r : report.rows) {
        if (r.setting == "GM-GD") {
          scores.push_back({m, seed, r.metrics.accuracy, r.metrics.ece, r.metrics.nll});
        }
      }
    }
  }
  // Duplicate entries in the method list compare identical score lists and
  // come out flagged as degenerate.
  std::vector<CompareScore> expanded;
  std::vector<std::string> labels;
  std::map<std::string, int> seen;
  for (const auto& m : methods) {
    const int dup = seen[m]++;
    const std::string label = dup == 0 ? m : m + "#" + std::to_string(dup + 1);
    labels.push_back(label);
    for (const auto& s : scores) {
      if (s.method == m) expanded.push_back({label, s.seed, s.acc, s.ece, s.nll});
    }
  }
  return compare_scores(std::move(expanded), labels);
}

IncrementalResult run_incremental(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto [train, test] = load_dataset(cfg, seed);
  const auto& inc = cfg.incremental;
  for (int c : inc.task_a) {
    if (c < 0 || c >= train.classes) throw ConfigError("incremental.task_a", "class out of range");
  }
  for (int c : inc.task_b) {
    if (c < 0 || c >= train.classes) throw ConfigError("incremental.task_b", "class out of range");
  }
  const Dataset train_a = filter_classes(train, inc.task_a);
  const Dataset train_b = filter_classes(train, inc.task_b);
  const Dataset test_a = filter_classes(test, inc.task_a);
  const Dataset test_b = filter_classes(test, inc.task_b);
  if (train_a.size() == 0 || train_b.size() == 0 || test_a.size() == 0 || test_b.size() == 0) {
    throw ConfigError("incremental", "each task needs training and test examples");
  }

  MlpSpec spec;
  spec.layer_sizes.push_back(train.dim());
  for (int h : cfg.model.hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(train.classes);
  const Vector init = glorot_init(spec, derive_seed(seed, {stream::kIncremental, 0}));
  const MeanInitializer initializer = [&](std::size_t, std::uint64_t) { return init; };

  LocalTraining plan;
  plan.spec = spec;
  plan.epochs = inc.epochs;
  plan.batch_size = cfg.federation.batch_size;
  plan.mc_train = cfg.optimizer.mc_train;
  plan.schedule = cfg.lr_schedule();
  plan.total_epochs = inc.epochs;

  auto train_task = [&](const Dataset& data, std::uint64_t tag) {
    ClientState c;
    c.train_shard = data;
    c.ess = static_cast<std::int64_t>(data.size());
    c.optimizer = ivon_init(param_count(spec), cfg.ivon_hyper(c.ess), seed, initializer);
    std::mt19937_64 rng(derive_seed(seed, {stream::kIncremental, tag}));
    local_train(c, plan, rng);
    return *c.local_posterior;
  };
  const DiagGaussian model_a = train_task(train_a, 1);
  // Task A's data is not touched after this point.
  const DiagGaussian model_b = train_task(train_b, 2);

  const AggregationMethod method = parse_aggregation(inc.method);
  IncrementalResult result;
  result.seed = seed;
  result.method = std::string(to_string(method));
  const std::uint64_t seed_a = derive_seed(seed, {stream::kEvaluation, 100});
  const std::uint64_t seed_b = derive_seed(seed, {stream::kEvaluation, 101});
  for (double w : inc.weights) {
    const DiagGaussian pair[] = {model_a, model_b};
    const double ws[] = {1.0 - w, w};
    const DiagGaussian q = aggregate(method, pair, ws);
    IncrementalPoint p;
    p.weight = w;
    p.task_a = evaluate(spec, q, test_a, cfg.eval.mc_samples, cfg.eval.ece_bins, seed_a);
    p.task_b = evaluate(spec, q, test_b, cfg.eval.mc_samples, cfg.eval.ece_bins, seed_b);
    result.points.push_back(p);
  }
  return result;
}

bool has_tradeoff_point(const IncrementalResult& result) {
  const IncrementalPoint* a = nullptr;
  const IncrementalPoint* b = nullptr;
  for (const auto& p : result.points) {
    if (p.weight == 0.0) a = &p;
    if (p.weight == 1.0) b = &p;
  }
  if (!a || !b) return false;
  for (const auto& p : result.points) {
    if (p.weight <= 0.0 || p.weight >= 1.0) continue;
    if (p.task_a.accuracy > b->task_a.accuracy && p.task_b.accuracy > a->task_b.accuracy) return true;
  }
  return false;
}

bool GeometryValidation::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

GeometryValidation validate_geometry(const ValidationOptions& options) {
  GeometryValidation out;
  const bool fault = options.inject_w2b_fault;

  // Barycenter optimality.
  for (AggregationMethod method :
       {AggregationMethod::EAA, AggregationMethod::W2B, AggregationMethod::RKLB}) {
    PropertyResult pr;
    pr.name = "barycenter-optimality/" + std::string(to_string(method));
    std::mt19937_64 rng(derive_seed(options.seed, {10, static_cast<std::uint64_t>(method)}));
    for (int i = 0; i < options.instances; ++i) {
      const Instance inst = random_instance(rng);
      const DiagGaussian ps[] = {inst.a, inst.b};
      const double ws[] = {1.0 - inst.weight, inst.weight};
      const DiagGaussian q = closed_form(method, ps, ws, fault);
      const double closed = barycenter_objective(method, q, ps, ws);
      const double grid = grid_minimum(method, ps, ws, q);
      const double violation = closed - grid;
      ++pr.checked;
      if (violation > 1e-12 * (1.0 + std::abs(grid))) {
        if (pr.passed) {
          std::ostringstream os;
          os.precision(10);
          os << "p1=" << describe(inst.a) << " p2=" << describe(inst.b) << " w2=" << inst.weight
             << " closed=" << describe(q) << " objective " << closed << " > grid " << grid;
          pr.counterexample = os.str();
        }
        pr.passed = false;
        pr.worst = std::max(pr.worst, violation);
      }
    }
    out.results.push_back(pr);
  }

  // Projection equals two-point barycenter, checked against the oracle.
  const Lambda lambdas[] = {Lambda(0.25), Lambda(1.0), Lambda(4.0)};
  constexpr double kOracleTolerance = 2e-3;
  for (Divergence d : {Divergence::RKL, Divergence::W2SQ}) {
    PropertyResult pr;
    pr.name = "projection-oracle/" + std::string(to_string(d));
    std::mt19937_64 rng(derive_seed(options.seed, {20, static_cast<std::uint64_t>(d)}));
    for (int i = 0; i < options.instances; ++i) {
      const Instance inst = random_instance(rng);
      for (const Lambda& l : lambdas) {
        const DiagGaussian closed = closed_projection(d, inst.a, inst.b, l, fault);
        const double radius = divergence(d, closed, inst.b);
        const DiagGaussian oracle = numeric_projection_oracle(d, inst.a, inst.b, radius);
        const double err = std::max(std::abs(oracle.mean()[0] - closed.mean()[0]),
                                    std::abs(std::sqrt(oracle.var()[0]) - std::sqrt(closed.var()[0])));
        ++pr.checked;
        pr.worst = std::max(pr.worst, err);
        if (err > kOracleTolerance && pr.passed) {
          pr.passed = false;
          std::ostringstream os;
          os.precision(10);
          os << "p_g=" << describe(inst.a) << " p_k=" << describe(inst.b) << " lambda=" << l.str()
             << " closed=" << describe(closed) << " oracle=" << describe(oracle);
          pr.counterexample = os.str();
        }
      }
    }
    out.results.push_back(pr);
  }

  // Endpoints and monotone trade-off along the default grid.
  const std::vector<Lambda> grid = PersonalizationSection{}.lambdas;
  for (Divergence d : {Divergence::RKL, Divergence::W2SQ}) {
    PropertyResult endpoints{"geodesic-endpoints/" + std::string(to_string(d))};
    PropertyResult monotone{"geodesic-monotonicity/" + std::string(to_string(d))};
    std::mt19937_64 rng(derive_seed(options.seed, {30, static_cast<std::uint64_t>(d)}));
    for (int i = 0; i < options.instances; ++i) {
      const Instance inst = random_instance(rng);
      std::vector<DiagGaussian> path;
      for (const Lambda& l : grid) path.push_back(closed_projection(d, inst.a, inst.b, l, fault));
      ++endpoints.checked;
      if (!(path.front() == inst.a) || !(path.back() == inst.b)) {
        if (endpoints.passed) {
          endpoints.counterexample = "p_g=" + describe(inst.a) + " p_k=" + describe(inst.b);
        }
        endpoints.passed = false;
      }
      for (std::size_t j = 1; j < path.size(); ++j) {
        const double to_local_prev = divergence(d, path[j - 1], inst.b);
        const double to_local = divergence(d, path[j], inst.b);
        const double to_global_prev = divergence(d, path[j - 1], inst.a);
        const double to_global = divergence(d, path[j], inst.a);
        const double slack = 1e-12 * (1.0 + to_local_prev + to_global);
        const double v = std::max(to_local - to_local_prev, to_global_prev - to_global);
        ++monotone.checked;
        if (v > slack) {
          if (monotone.passed) {
            monotone.counterexample = "p_g=" + describe(inst.a) + " p_k=" + describe(inst.b) +
                                      " between lambda " + grid[j - 1].str() + " and " +
                                      grid[j].str();
          }
          monotone.passed = false;
          monotone.worst = std::max(monotone.worst, v);
        }
      }
    }
    out.results.push_back(endpoints);
    out.results.push_back(monotone);
  }
  return out;
}

}  // namespace bfl
