#include "bfl/config.hpp"

#include <fstream>
#include <set>

namespace bfl {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that
// leftovers (typos) can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      convert(j_.at(key), out);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(field(key), std::string("invalid value (") + e.what() + ")");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), field(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  template <typename T>
  void convert(const json& v, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("", "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
      out = v.get<T>();
    } else {
      out = v.get<T>();
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Lambda lambda_from_json(const json& v, const std::string& field) {
  try {
    if (v.is_string()) return Lambda::parse(v.get<std::string>());
    if (v.is_number()) return Lambda(v.get<double>());
  } catch (const ContractError& e) {
    throw ConfigError(field, e.what());
  }
  throw ConfigError(field, "expected a number or \"inf\"");
}

json lambda_to_json(const Lambda& l) {
  if (l.is_infinite()) return "inf";
  return l.value();
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "");

  if (root.has("dataset")) {
    Section s = root.child("dataset");
    auto& d = cfg.dataset;
    s.read("name", d.name);
    s.read("n_per_class", d.n_per_class);
    s.read("n_test_per_class", d.n_test_per_class);
    s.read("classes", d.classes);
    s.read("dim", d.dim);
    s.read("spread", d.spread);
    s.read("train_images", d.train_images);
    s.read("train_labels", d.train_labels);
    s.read("test_images", d.test_images);
    s.read("test_labels", d.test_labels);
    s.read("train_subset", d.train_subset);
    s.read("test_subset", d.test_subset);
    if (s.has("seed")) {
      std::uint64_t seed = 0;
      s.read("seed", seed);
      d.seed = seed;
    }
    s.finish();
  }
  if (root.has("partition")) {
    Section s = root.child("partition");
    s.read("n_clients", cfg.partition.n_clients);
    s.read("beta", cfg.partition.beta);
    s.read("min_shard", cfg.partition.min_shard);
    s.read("partition_test", cfg.partition.partition_test);
    s.finish();
  }
  if (root.has("model")) {
    Section s = root.child("model");
    s.read("hidden", cfg.model.hidden);
    s.finish();
  }
  if (root.has("optimizer")) {
    Section s = root.child("optimizer");
    auto& o = cfg.optimizer;
    s.read("lr_initial", o.lr_initial);
    s.read("lr_final", o.lr_final);
    s.read("schedule", o.schedule);
    s.read("weight_decay", o.weight_decay);
    s.read("beta1", o.beta1);
    s.read("beta2", o.beta2);
    s.read("h0", o.h0);
    if (s.has("clip_radius")) {
      json raw;
      s.read("clip_radius", raw);
      if (raw.is_number()) {
        o.clip_radius = raw.get<double>();
      } else if (raw.is_null()) {
        o.clip_radius.reset();
      } else {
        throw ConfigError(s.field("clip_radius"), "expected a number or null");
      }
    }
    s.read("mc_train", o.mc_train);
    s.finish();
  }
  if (root.has("federation")) {
    Section s = root.child("federation");
    auto& f = cfg.federation;
    s.read("rounds", f.rounds);
    s.read("local_epochs", f.local_epochs);
    s.read("batch_size", f.batch_size);
    s.read("aggregation", f.aggregation);
    s.read("parallel", f.parallel);
    s.read("threads", f.threads);
    s.finish();
  }
  if (root.has("personalization")) {
    Section s = root.child("personalization");
    auto& p = cfg.personalization;
    s.read("divergence", p.divergence);
    if (s.has("lambdas")) {
      json raw;
      s.read("lambdas", raw);
      require(raw.is_array(), s.field("lambdas"), "expected an array");
      p.lambdas.clear();
      for (std::size_t i = 0; i < raw.size(); ++i) {
        p.lambdas.push_back(lambda_from_json(raw[i], s.field("lambdas") + "[" + std::to_string(i) + "]"));
      }
    }
    if (s.has("report_lambda")) {
      json raw;
      s.read("report_lambda", raw);
      p.report_lambda = lambda_from_json(raw, s.field("report_lambda"));
    }
    s.read("every_round", p.every_round);
    s.finish();
  }
  if (root.has("eval")) {
    Section s = root.child("eval");
    s.read("mc_samples", cfg.eval.mc_samples);
    s.read("ece_bins", cfg.eval.ece_bins);
    s.finish();
  }
  if (root.has("fedavg")) {
    Section s = root.child("fedavg");
    s.read("enabled", cfg.fedavg.enabled);
    s.read("variance", cfg.fedavg.variance);
    s.finish();
  }
  if (root.has("compare")) {
    Section s = root.child("compare");
    s.read("methods", cfg.compare.methods);
    s.finish();
  }
  if (root.has("incremental")) {
    Section s = root.child("incremental");
    auto& inc = cfg.incremental;
    s.read("task_a", inc.task_a);
    s.read("task_b", inc.task_b);
    s.read("epochs", inc.epochs);
    s.read("method", inc.method);
    s.read("weights", inc.weights);
    s.finish();
  }
  root.read("seeds", cfg.seeds);
  root.read("output_dir", cfg.output_dir);
  root.finish();

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  if (d.name == "synth_blobs") {
    require(d.n_per_class >= 1, "dataset.n_per_class", "must be >= 1");
    require(d.n_test_per_class >= 1, "dataset.n_test_per_class", "must be >= 1");
    require(d.classes >= 2, "dataset.classes", "must be >= 2");
    require(d.dim >= 1, "dataset.dim", "must be >= 1");
    require(d.spread >= 0.0, "dataset.spread", "must be >= 0");
  } else if (d.name == "idx") {
    require(!d.train_images.empty(), "dataset.train_images", "required when dataset.name is \"idx\"");
    require(!d.train_labels.empty(), "dataset.train_labels", "required when dataset.name is \"idx\"");
    require(!d.test_images.empty(), "dataset.test_images", "required when dataset.name is \"idx\"");
    require(!d.test_labels.empty(), "dataset.test_labels", "required when dataset.name is \"idx\"");
    const std::pair<const char*, const std::string*> files[] = {
        {"dataset.train_images", &d.train_images},
        {"dataset.train_labels", &d.train_labels},
        {"dataset.test_images", &d.test_images},
        {"dataset.test_labels", &d.test_labels}};
    for (const auto& [field, path] : files) {
      require(std::filesystem::is_regular_file(*path), field, "no such file '" + *path + "'");
    }
  } else {
    throw ConfigError("dataset.name", "unknown dataset '" + d.name + "' (expected synth_blobs or idx)");
  }
  require(partition.n_clients >= 1, "partition.n_clients", "must be >= 1");
  require(partition.beta > 0.0, "partition.beta", "must be > 0");
  for (int h : model.hidden) require(h >= 1, "model.hidden", "layer sizes must be >= 1");
  const auto& o = optimizer;
  require(o.lr_initial > 0.0, "optimizer.lr_initial", "must be > 0");
  require(o.lr_final > 0.0, "optimizer.lr_final", "must be > 0");
  try {
    LrSchedule::parse_kind(o.schedule);
  } catch (const ContractError& e) {
    throw ConfigError("optimizer.schedule", e.what());
  }
  require(o.weight_decay > 0.0, "optimizer.weight_decay", "must be > 0");
  require(o.beta1 >= 0.0 && o.beta1 < 1.0, "optimizer.beta1", "must be in [0, 1)");
  require(o.beta2 >= 0.0 && o.beta2 < 1.0, "optimizer.beta2", "must be in [0, 1)");
  require(o.h0 > 0.0, "optimizer.h0", "must be > 0");
  require(!o.clip_radius || *o.clip_radius > 0.0, "optimizer.clip_radius", "must be > 0");
  require(o.mc_train >= 1, "optimizer.mc_train", "must be >= 1");
  const auto& f = federation;
  require(f.rounds >= 1, "federation.rounds", "must be >= 1");
  require(f.local_epochs >= 0, "federation.local_epochs", "must be >= 0");
  require(f.batch_size >= 1, "federation.batch_size", "must be >= 1");
  require(f.threads >= 1, "federation.threads", "must be >= 1");
  try {
    parse_aggregation(f.aggregation);
  } catch (const ContractError& e) {
    throw ConfigError("federation.aggregation", e.what());
  }
  try {
    barycenter_method_of(parse_divergence(personalization.divergence));
  } catch (const ContractError& e) {
    throw ConfigError("personalization.divergence", e.what());
  }
  require(!personalization.lambdas.empty(), "personalization.lambdas", "must not be empty");
  require(std::is_sorted(personalization.lambdas.begin(), personalization.lambdas.end()),
          "personalization.lambdas", "must be sorted ascending");
  require(eval.mc_samples >= 1, "eval.mc_samples", "must be >= 1");
  require(eval.ece_bins >= 1, "eval.ece_bins", "must be >= 1");
  require(fedavg.variance > 0.0, "fedavg.variance", "must be > 0");
  for (const auto& m : compare.methods) {
    try {
      parse_aggregation(m);
    } catch (const ContractError& e) {
      throw ConfigError("compare.methods", e.what());
    }
  }
  require(!incremental.task_a.empty() && !incremental.task_b.empty(), "incremental",
          "task_a and task_b must be non-empty");
  require(incremental.epochs >= 1, "incremental.epochs", "must be >= 1");
  try {
    parse_aggregation(incremental.method);
  } catch (const ContractError& e) {
    throw ConfigError("incremental.method", e.what());
  }
  for (double w : incremental.weights) {
    require(w >= 0.0 && w <= 1.0, "incremental.weights", "entries must be in [0, 1]");
  }
  require(!seeds.empty(), "seeds", "must list at least one seed");
}

IvonHyper ExperimentConfig::ivon_hyper(std::int64_t ess) const {
  IvonHyper h;
  h.lr = optimizer.lr_initial;
  h.weight_decay = optimizer.weight_decay;
  h.ess = ess;
  h.beta1 = optimizer.beta1;
  h.beta2 = optimizer.beta2;
  h.h0 = optimizer.h0;
  h.clip_radius = optimizer.clip_radius;
  return h;
}

LrSchedule ExperimentConfig::lr_schedule() const {
  return {LrSchedule::parse_kind(optimizer.schedule), optimizer.lr_initial, optimizer.lr_final};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& cfg) {
  json lambdas = json::array();
  for (const auto& l : cfg.personalization.lambdas) lambdas.push_back(lambda_to_json(l));
  const auto& d = cfg.dataset;
  json dataset = {{"name", d.name}};
  if (d.name == "synth_blobs") {
    dataset.update({{"n_per_class", d.n_per_class},
                    {"n_test_per_class", d.n_test_per_class},
                    {"classes", d.classes},
                    {"dim", d.dim},
                    {"spread", d.spread}});
  } else {
    dataset.update({{"train_images", d.train_images},
                    {"train_labels", d.train_labels},
                    {"test_images", d.test_images},
                    {"test_labels", d.test_labels},
                    {"train_subset", d.train_subset},
                    {"test_subset", d.test_subset}});
  }
  if (d.seed) dataset["seed"] = *d.seed;
  const auto& o = cfg.optimizer;
  return {
      {"dataset", dataset},
      {"partition",
       {{"n_clients", cfg.partition.n_clients},
        {"beta", cfg.partition.beta},
        {"min_shard", cfg.partition.min_shard},
        {"partition_test", cfg.partition.partition_test}}},
      {"model", {{"hidden", cfg.model.hidden}}},
      {"optimizer",
       {{"lr_initial", o.lr_initial},
        {"lr_final", o.lr_final},
        {"schedule", o.schedule},
        {"weight_decay", o.weight_decay},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"h0", o.h0},
        {"clip_radius", o.clip_radius ? json(*o.clip_radius) : json(nullptr)},
        {"mc_train", o.mc_train}}},
      {"federation",
       {{"rounds", cfg.federation.rounds},
        {"local_epochs", cfg.federation.local_epochs},
        {"batch_size", cfg.federation.batch_size},
        {"aggregation", cfg.federation.aggregation},
        {"parallel", cfg.federation.parallel},
        {"threads", cfg.federation.threads}}},
      {"personalization",
       {{"divergence", cfg.personalization.divergence},
        {"lambdas", lambdas},
        {"report_lambda", lambda_to_json(cfg.personalization.report_lambda)},
        {"every_round", cfg.personalization.every_round}}},
      {"eval", {{"mc_samples", cfg.eval.mc_samples}, {"ece_bins", cfg.eval.ece_bins}}},
      {"fedavg", {{"enabled", cfg.fedavg.enabled}, {"variance", cfg.fedavg.variance}}},
      {"compare", {{"methods", cfg.compare.methods}}},
      {"incremental",
       {{"task_a", cfg.incremental.task_a},
        {"task_b", cfg.incremental.task_b},
        {"epochs", cfg.incremental.epochs},
        {"method", cfg.incremental.method},
        {"weights", cfg.incremental.weights}}},
      {"seeds", cfg.seeds},
      {"output_dir", cfg.output_dir},
  };
}

}  // namespace bfl
