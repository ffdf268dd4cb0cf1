#include "bfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

namespace bfl {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr int kMaxPartitionAttempts = 100;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("idx-io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t at,
                   const std::filesystem::path& path) {
  if (bytes.size() < at + 4) throw IdxError("idx-truncated", path.string() + " header is truncated");
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return by_class;
}

// Cuts `rows` (already shuffled) into consecutive pieces following `p`.
void cut_by_proportions(const std::vector<std::size_t>& rows, const Eigen::RowVectorXd& p,
                        std::vector<std::vector<std::size_t>>& shards) {
  const double n = static_cast<double>(rows.size());
  double cumulative = 0.0;
  std::size_t start = 0;
  const auto clients = static_cast<std::size_t>(p.size());
  for (std::size_t k = 0; k < clients; ++k) {
    cumulative += p[static_cast<Eigen::Index>(k)];
    std::size_t end = k + 1 == clients ? rows.size()
                                       : static_cast<std::size_t>(std::llround(cumulative * n));
    end = std::clamp(end, start, rows.size());
    shards[k].insert(shards[k].end(), rows.begin() + static_cast<std::ptrdiff_t>(start),
                     rows.begin() + static_cast<std::ptrdiff_t>(end));
    start = end;
  }
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw ContractError("dataset '" + name + "' is empty");
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw ContractError("dataset '" + name + "': rows and labels differ in count");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ContractError("dataset '" + name + "': label out of range");
  }
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(static_cast<std::size_t>(classes), 0);
  for (int y : labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (be32(img, 0, images) != kIdxImageMagic) {
    throw IdxError("idx-bad-magic", images.string() + " is not an IDX image file");
  }
  if (be32(lab, 0, labels) != kIdxLabelMagic) {
    throw IdxError("idx-bad-magic", labels.string() + " is not an IDX label file");
  }
  const std::size_t n = be32(img, 4, images);
  const std::size_t rows = be32(img, 8, images);
  const std::size_t cols = be32(img, 12, images);
  const std::size_t n_labels = be32(lab, 4, labels);
  if (n != n_labels) {
    throw IdxError("idx-count-mismatch", std::to_string(n) + " images but " +
                                             std::to_string(n_labels) + " labels");
  }
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n * dim) {
    throw IdxError("idx-truncated", images.string() + " holds fewer pixels than its header claims");
  }
  if (lab.size() < 8 + n) {
    throw IdxError("idx-truncated", labels.string() + " holds fewer labels than its header claims");
  }

  Dataset ds;
  ds.name = images.stem().string();
  ds.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(img[16 + i * dim + j]) / 255.0;
    }
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = max_label + 1;
  return ds;
}

Dataset synth_blobs(int n_per_class, int classes, int dim, double spread, std::uint64_t seed) {
  if (n_per_class < 1 || classes < 1 || dim < 1 || !(spread >= 0.0)) {
    throw ContractError("synth_blobs: counts must be positive and spread non-negative");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centers(classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < dim; ++j) centers(c, j) = uni(rng);
  }
  Dataset ds;
  ds.name = "synth_blobs";
  ds.classes = classes;
  ds.inputs.resize(static_cast<Eigen::Index>(n_per_class) * classes, dim);
  ds.labels.reserve(static_cast<std::size_t>(n_per_class) * classes);
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < n_per_class; ++i, ++row) {
      for (int j = 0; j < dim; ++j) ds.inputs(row, j) = centers(c, j) + spread * normal(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.name = ds.name;
  out.classes = ds.classes;
  out.inputs.resize(static_cast<Eigen::Index>(indices.size()), ds.inputs.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw ContractError("subset: index out of range");
    out.inputs.row(static_cast<Eigen::Index>(i)) =
        ds.inputs.row(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(ds.labels[indices[i]]);
  }
  return out;
}

Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw ContractError("concat: nothing to concatenate");
  Dataset out;
  out.name = parts.front().name;
  out.classes = parts.front().classes;
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.inputs.cols() != parts.front().inputs.cols() || p.classes != out.classes) {
      throw ContractError("concat: incompatible datasets");
    }
    rows += p.inputs.rows();
  }
  out.inputs.resize(rows, parts.front().inputs.cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.inputs.middleRows(at, p.inputs.rows()) = p.inputs;
    at += p.inputs.rows();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

Dataset filter_classes(const Dataset& ds, std::span<const int> keep) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), ds.labels[i]) != keep.end()) rows.push_back(i);
  }
  return subset(ds, rows);
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ContractError("stratified_split: test_fraction must be in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& rows : rows_by_class(ds)) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(rows.size())));
    test.insert(test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {subset(ds, train), subset(ds, test)};
}

Dataset random_subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(n, rows.size()));
  std::sort(rows.begin(), rows.end());
  return subset(ds, rows);
}

void PartitionConfig::validate() const {
  if (n_clients < 1) throw ContractError("partition: n_clients must be >= 1");
  if (!(beta > 0.0)) throw ContractError("partition: beta must be > 0");
}

Partition dirichlet_partition(const Dataset& ds, const PartitionConfig& cfg) {
  cfg.validate();
  ds.validate();
  const auto clients = static_cast<std::size_t>(cfg.n_clients);
  Partition result;
  if (clients == 1) {
    result.shards.assign(1, std::vector<std::size_t>(ds.size()));
    std::iota(result.shards[0].begin(), result.shards[0].end(), std::size_t{0});
    result.proportions = Matrix::Ones(ds.classes, 1);
    return result;
  }

  std::mt19937_64 rng(cfg.seed);
  std::gamma_distribution<double> gamma(cfg.beta, 1.0);
  const auto by_class = rows_by_class(ds);
  for (int attempt = 1; attempt <= kMaxPartitionAttempts; ++attempt) {
    Matrix proportions(ds.classes, cfg.n_clients);
    for (int c = 0; c < ds.classes; ++c) {
      double total = 0.0;
      while (!(total > 0.0)) {
        for (int k = 0; k < cfg.n_clients; ++k) proportions(c, k) = gamma(rng);
        total = proportions.row(c).sum();
      }
      proportions.row(c) /= total;
    }
    std::vector<std::vector<std::size_t>> shards(clients);
    for (int c = 0; c < ds.classes; ++c) {
      auto rows = by_class[static_cast<std::size_t>(c)];
      std::shuffle(rows.begin(), rows.end(), rng);
      cut_by_proportions(rows, proportions.row(c), shards);
    }
    const bool ok = std::all_of(shards.begin(), shards.end(),
                                [&](const auto& s) { return s.size() >= cfg.min_shard; });
    if (ok) {
      for (auto& s : shards) std::sort(s.begin(), s.end());
      if (attempt > 1) {
        spdlog::info("dirichlet_partition: accepted after {} attempts (min_shard={})", attempt,
                     cfg.min_shard);
      }
      result.shards = std::move(shards);
      result.proportions = std::move(proportions);
      result.attempts = attempt;
      return result;
    }
  }
  throw std::runtime_error("dirichlet_partition: no partition with every shard >= " +
                           std::to_string(cfg.min_shard) + " rows after " +
                           std::to_string(kMaxPartitionAttempts) +
                           " attempts; use a larger beta or fewer clients");
}

std::vector<std::vector<std::size_t>> split_by_proportions(const Dataset& ds,
                                                           const Matrix& proportions,
                                                           std::uint64_t seed) {
  if (proportions.rows() != ds.classes) {
    throw ContractError("split_by_proportions: proportions need one row per class");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> shards(static_cast<std::size_t>(proportions.cols()));
  const auto by_class = rows_by_class(ds);
  for (int c = 0; c < ds.classes; ++c) {
    auto rows = by_class[static_cast<std::size_t>(c)];
    std::shuffle(rows.begin(), rows.end(), rng);
    cut_by_proportions(rows, proportions.row(c), shards);
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

nlohmann::json shard_manifest(const Dataset& ds,
                              const std::vector<std::vector<std::size_t>>& shards) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t k = 0; k < shards.size(); ++k) {
    std::vector<std::size_t> hist(static_cast<std::size_t>(ds.classes), 0);
    for (std::size_t i : shards[k]) ++hist[static_cast<std::size_t>(ds.labels[i])];
    out.push_back({{"client_id", k}, {"indices", shards[k]}, {"class_histogram", hist}});
  }
  return out;
}

}  // namespace bfl
