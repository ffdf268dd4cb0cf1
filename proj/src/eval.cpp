#include "bfl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bfl {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr std::size_t kExactLimit = 20;

}  // namespace

MetricsReport metrics_from_probs(const Matrix& probs, std::span<const int> labels, int bins) {
  if (labels.empty()) throw ContractError("evaluate: empty dataset");
  if (bins < 1) throw ContractError("evaluate: bins must be >= 1");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw ContractError("evaluate: probability rows and labels differ");
  }
  const auto n = labels.size();
  std::vector<double> bin_conf(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> bin_correct(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> bin_count(static_cast<std::size_t>(bins), 0);
  std::size_t correct = 0;
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    Eigen::Index pred = 0;
    const double conf = probs.row(r).maxCoeff(&pred);  // first maximum on ties
    const bool hit = pred == labels[i];
    correct += hit ? 1 : 0;
    nll -= std::log(std::max(probs(r, labels[i]), kProbFloor));
    const auto b = static_cast<std::size_t>(
        std::min(bins - 1, static_cast<int>(std::floor(conf * bins))));
    bin_conf[b] += conf;
    bin_correct[b] += hit ? 1.0 : 0.0;
    ++bin_count[b];
  }
  double ece = 0.0;
  for (std::size_t b = 0; b < bin_count.size(); ++b) {
    if (bin_count[b] == 0) continue;
    const double cnt = static_cast<double>(bin_count[b]);
    ece += (cnt / static_cast<double>(n)) * std::abs(bin_correct[b] / cnt - bin_conf[b] / cnt);
  }
  MetricsReport m;
  m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
  m.ece = ece;
  m.nll = nll / static_cast<double>(n);
  m.n_examples = n;
  m.bins = bins;
  return m;
}

MetricsReport evaluate(const MlpSpec& spec, const DiagGaussian& posterior, const Dataset& ds,
                       int mc_samples, int bins, std::uint64_t seed) {
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  const Matrix probs = predict_proba_mc(spec, posterior, ds.inputs, mc_samples, seed);
  MetricsReport m = metrics_from_probs(probs, ds.labels, bins);
  m.mc_samples = mc_samples;
  return m;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                    WilcoxonMethod method) {
  if (x.size() != y.size()) throw ContractError("wilcoxon: samples must have equal length");
  if (x.empty()) throw ContractError("wilcoxon: need at least one pair");

  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw DegenerateSample();
  const std::size_t n = diffs.size();

  // Doubled average ranks are integers, which keeps the exact path integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(diffs[a]) < std::abs(diffs[b]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long doubled = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  long w_plus2 = 0;
  long total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0.0) w_plus2 += rank2[i];
  }
  const long w_minus2 = total2 - w_plus2;
  const long stat2 = std::min(w_plus2, w_minus2);

  WilcoxonResult r;
  r.w_plus = w_plus2 / 2.0;
  r.w_minus = w_minus2 / 2.0;
  r.statistic = stat2 / 2.0;
  r.n_effective = n;
  r.exact = method == WilcoxonMethod::Exact ||
            (method == WilcoxonMethod::Auto && n <= kExactLimit);

  if (r.exact) {
    // Null distribution of W+ by subset-sum counting over sign assignments.
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s) {
        if (count[static_cast<std::size_t>(s)] != 0.0) {
          count[static_cast<std::size_t>(s + rank2[i])] += count[static_cast<std::size_t>(s)];
        }
      }
      reach += rank2[i];
    }
    double extreme = 0.0;
    for (long s = 0; s <= total2; ++s) {
      if (std::min(s, total2 - s) <= stat2) extreme += count[static_cast<std::size_t>(s)];
    }
    r.p_two_sided = std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(n)));
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) {
      r.p_two_sided = 1.0;
    } else {
      const double dev = std::max(0.0, mean - r.statistic - 0.5);
      const double z = dev / std::sqrt(var);
      r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    }
  }
  return r;
}

std::vector<PairwiseP> compare_aggregations(
    const std::vector<std::pair<std::string, std::vector<double>>>& scores) {
  if (scores.size() < 2) throw ContractError("compare_aggregations: need at least two methods");
  const std::size_t len = scores.front().second.size();
  for (const auto& [name, values] : scores) {
    if (values.size() != len) {
      throw ContractError("compare_aggregations: misaligned pairs for method '" + name + "'");
    }
  }
  std::vector<PairwiseP> out;
  for (std::size_t a = 1; a < scores.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      PairwiseP entry{scores[a].first, scores[b].first, std::nullopt, std::nullopt};
      try {
        const WilcoxonResult r = wilcoxon_signed_rank(scores[a].second, scores[b].second);
        entry.p = r.p_two_sided;
        entry.statistic = r.statistic;
      } catch (const DegenerateSample&) {
      }
      out.push_back(std::move(entry));
    }
  }
  return out;
}

}  // namespace bfl
