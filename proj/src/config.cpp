#include "xfnc/config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "xfnc/error.hpp"

namespace xfnc {

namespace {

using nlohmann::json;

template <class T>
void read_field(const json& doc, const char* key, T& out) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->get<long long>() < 0)) {
        throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("");
    } else {
      if (!it->is_string()) throw ConfigError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    const char* expected = std::is_same_v<T, bool>        ? "a boolean"
                           : std::is_unsigned_v<T>        ? "a non-negative integer"
                           : std::is_integral_v<T>        ? "an integer"
                           : std::is_floating_point_v<T> ? "a number"
                                                          : "a string";
    throw ConfigError("config field '" + std::string(key) + "' must be " + expected);
  }
}

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys = {
      "N",       "K",         "Q",         "R",          "M",
      "T_l",     "eta",       "lambda",    "normalize_features",
      "feature_top_k",        "T",         "finetune_mean",         "alpha",      "beta",
      "beta1",   "beta2",     "gamma",     "dropout",    "dropout_target",
      "hidden",  "predictor_hidden",       "labels_per_class",
      "T_train", "T_test",    "seed",      "ablation",   "train_propagation_all_nodes",
      "val_interval",         "val_tasks", "checkpoint_interval",      "workers"};
  return keys;
}

}  // namespace

nlohmann::ordered_json to_json(const meta::TrainConfig& c) {
  nlohmann::ordered_json j;
  j["N"] = c.ways;
  j["K"] = c.shots;
  j["Q"] = c.query_size;
  j["R"] = c.poisson.random_nodes;
  j["M"] = c.poisson.num_pseudo;
  j["T_l"] = c.poisson.steps;
  j["eta"] = c.poisson.eta;
  j["lambda"] = c.poisson.lambda;
  j["normalize_features"] = c.poisson.normalize_features;
  j["feature_top_k"] = c.poisson.feature_top_k;
  j["T"] = c.finetune_steps;
  j["finetune_mean"] = c.finetune_mean;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["gamma"] = c.gamma;
  j["dropout"] = c.dropout;
  j["dropout_target"] = c.dropout_target;
  j["hidden"] = c.hidden;
  j["predictor_hidden"] = c.predictor_hidden;
  j["labels_per_class"] = c.labels_per_class;
  j["T_train"] = c.train_episodes;
  j["T_test"] = c.test_tasks;
  j["seed"] = c.seed;
  j["ablation"] = meta::to_string(c.ablation);
  j["train_propagation_all_nodes"] = c.train_propagation_all_nodes;
  j["val_interval"] = c.val_interval;
  j["val_tasks"] = c.val_tasks;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["workers"] = c.workers;
  return j;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["data_dir"] = c.data_dir.string();
  j["out_dir"] = c.out_dir.string();
  const auto train = to_json(c.train);
  for (const auto& [k, v] : train.items()) j[k] = v;
  return j;
}

void apply_json(meta::TrainConfig& c, const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!train_keys().contains(it.key())) {
      throw ConfigError("unknown config field '" + it.key() + "'");
    }
  }
  read_field(doc, "N", c.ways);
  read_field(doc, "K", c.shots);
  read_field(doc, "Q", c.query_size);
  read_field(doc, "R", c.poisson.random_nodes);
  read_field(doc, "M", c.poisson.num_pseudo);
  read_field(doc, "T_l", c.poisson.steps);
  read_field(doc, "eta", c.poisson.eta);
  read_field(doc, "lambda", c.poisson.lambda);
  read_field(doc, "normalize_features", c.poisson.normalize_features);
  read_field(doc, "feature_top_k", c.poisson.feature_top_k);
  read_field(doc, "T", c.finetune_steps);
  read_field(doc, "finetune_mean", c.finetune_mean);
  read_field(doc, "alpha", c.alpha);
  read_field(doc, "beta", c.beta);
  read_field(doc, "beta1", c.beta1);
  read_field(doc, "beta2", c.beta2);
  read_field(doc, "gamma", c.gamma);
  read_field(doc, "dropout", c.dropout);
  read_field(doc, "dropout_target", c.dropout_target);
  read_field(doc, "hidden", c.hidden);
  read_field(doc, "predictor_hidden", c.predictor_hidden);
  read_field(doc, "labels_per_class", c.labels_per_class);
  read_field(doc, "T_train", c.train_episodes);
  read_field(doc, "T_test", c.test_tasks);
  read_field(doc, "seed", c.seed);
  std::string ablation = meta::to_string(c.ablation);
  read_field(doc, "ablation", ablation);
  c.ablation = meta::ablation_from_string(ablation);
  read_field(doc, "train_propagation_all_nodes", c.train_propagation_all_nodes);
  read_field(doc, "val_interval", c.val_interval);
  read_field(doc, "val_tasks", c.val_tasks);
  read_field(doc, "checkpoint_interval", c.checkpoint_interval);
  read_field(doc, "workers", c.workers);
}

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig rc;
  if (!doc.contains("data_dir")) throw ConfigError("missing config field 'data_dir'");
  std::string data_dir;
  read_field(doc, "data_dir", data_dir);
  rc.data_dir = data_dir;
  std::string out_dir = rc.out_dir.string();
  read_field(doc, "out_dir", out_dir);
  rc.out_dir = out_dir;
  json rest = doc;
  rest.erase("data_dir");
  rest.erase("out_dir");
  apply_json(rc.train, rest);
  validate(rc.train);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig rc = run_config_from_json(doc);
  // Relative data paths resolve against the config file's directory.
  if (rc.data_dir.is_relative() && path.has_parent_path()) {
    rc.data_dir = path.parent_path() / rc.data_dir;
  }
  return rc;
}

void validate(const meta::TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (c.ways == 0) fail("config field 'N' must be positive");
  if (c.shots == 0) fail("config field 'K' must be positive");
  if (c.query_size % c.ways != 0) fail("config field 'Q' must be a multiple of N");
  if (!(c.poisson.eta > 0.0)) fail("config field 'eta' must be positive");
  if (!(c.poisson.lambda >= 0.0 && c.poisson.lambda <= 1.0)) fail("config field 'lambda' must lie in [0, 1]");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) fail("config field 'gamma' must lie in [0, 1]");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("config field 'dropout' must lie in [0, 1)");
  if (!(c.alpha >= 0.0)) fail("config field 'alpha' must be non-negative");
  if (!(c.beta >= 0.0)) fail("config field 'beta' must be non-negative");
  if (!(c.beta1 >= 0.0)) fail("config field 'beta1' must be non-negative");
  if (!(c.beta2 >= 0.0)) fail("config field 'beta2' must be non-negative");
  if (c.hidden == 0 || c.predictor_hidden == 0) fail("hidden sizes must be positive");
  if (c.labels_per_class == 0) fail("config field 'labels_per_class' must be positive");
  if (c.workers == 0) fail("config field 'workers' must be positive");
}

nlohmann::ordered_json to_json(const meta::EvalReport& r) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["mean"] = r.mean;
  j["std"] = r.std;
  j["tasks"] = r.accuracies.size();
  j["per_task"] = r.accuracies;
  j["seed"] = r.seed;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string episode_csv_header() {
  return "episode,support_size,pseudo_precision,loss_y,loss_d,loss,query_acc";
}

std::string episode_csv_row(const meta::EpisodeLog& log) {
  std::string row = std::to_string(log.episode) + ",";
  if (log.skipped) return row + ",,,,,";
  row += std::to_string(log.support_size) + ",";
  if (log.pseudo_precision) row += format_double(*log.pseudo_precision);
  row += "," + format_double(log.loss_y) + "," + format_double(log.loss_d) + "," +
         format_double(log.loss) + "," + format_double(log.query_acc);
  return row;
}

}  // namespace xfnc
