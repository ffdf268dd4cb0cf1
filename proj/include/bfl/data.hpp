#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfl/mlp.hpp"

namespace bfl {

struct Dataset {
  Matrix inputs;            // n x dim
  std::vector<int> labels;  // n entries in [0, classes)
  int classes = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  int dim() const noexcept { return static_cast<int>(inputs.cols()); }
  void validate() const;
  std::vector<std::size_t> class_histogram() const;
};

/// IDX parsing failure. `code()` is one of idx-bad-magic, idx-truncated,
/// idx-count-mismatch, idx-io.
class IdxError : public std::runtime_error {
 public:
  IdxError(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Isotropic Gaussian clusters (std `spread`) around centers drawn uniformly
/// from [-1, 1]^dim. Rows are grouped by class.
Dataset synth_blobs(int n_per_class, int classes, int dim, double spread, std::uint64_t seed);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
Dataset concat(std::span<const Dataset> parts);

/// Keeps only rows whose label is in `keep`; labels are unchanged.
Dataset filter_classes(const Dataset& ds, std::span<const int> keep);

/// Per-class split: `test_fraction` of each class (rounded) goes to test.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

/// First `n` rows after a seeded shuffle.
Dataset random_subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

struct PartitionConfig {
  int n_clients = 10;
  double beta = 0.5;
  std::uint64_t seed = 0;
  std::size_t min_shard = 10;

  void validate() const;
};

struct Partition {
  std::vector<std::vector<std::size_t>> shards;  // ascending row indices
  Matrix proportions;                            // classes x clients
  int attempts = 1;
};

/// Label-skew partition: for each class, client proportions are drawn from
/// Dirichlet(beta) and the class's rows are split accordingly. Shards below
/// `min_shard` trigger a full resample (at most 100 attempts).
Partition dirichlet_partition(const Dataset& ds, const PartitionConfig& cfg);

/// Splits `ds` using fixed per-class proportions (classes x clients).
std::vector<std::vector<std::size_t>> split_by_proportions(const Dataset& ds,
                                                           const Matrix& proportions,
                                                           std::uint64_t seed);

/// [{client_id, indices, class_histogram}, ...]
nlohmann::json shard_manifest(const Dataset& ds,
                              const std::vector<std::vector<std::size_t>>& shards);

}  // namespace bfl
