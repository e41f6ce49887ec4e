#include "xfnc/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xfnc/config.hpp"
#include "xfnc/error.hpp"
#include "xfnc/gradcheck.hpp"
#include "xfnc/graph.hpp"
#include "xfnc/meta.hpp"
#include "xfnc/nn.hpp"
#include "xfnc/poisson.hpp"

namespace xfnc::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kOutDirEnv = "XFNC_OUT_DIR";

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

// Loads a run config and applies --set overrides and the output-directory
// override: --out flag > XFNC_OUT_DIR > file > default.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets,
                         const std::string& out_flag) {
  json doc;
  {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    const std::string value = s.substr(eq + 1);
    json parsed = json::parse(value, nullptr, false);
    doc[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  RunConfig rc = run_config_from_json(doc);
  const fs::path cfg_path(path);
  if (rc.data_dir.is_relative() && cfg_path.has_parent_path()) {
    rc.data_dir = cfg_path.parent_path() / rc.data_dir;
  }
  if (!out_flag.empty()) {
    rc.out_dir = out_flag;
  } else if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') {
    rc.out_dir = env;
  }
  return rc;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<double> parse_value_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad sweep value '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty sweep value list");
  return out;
}

void check_dims(const nn::ParamSet& p, const Graph& g, const meta::TrainConfig& cfg) {
  const nn::Dims want = meta::model_dims(g, cfg);
  if (!(p.dims == want)) {
    throw ConfigError("checkpoint dimensions (d=" + std::to_string(p.dims.features) +
                      ", h=" + std::to_string(p.dims.hidden) +
                      ", h1=" + std::to_string(p.dims.predictor) +
                      ", N=" + std::to_string(p.dims.ways) + ") do not match graph/config (d=" +
                      std::to_string(want.features) + ", h=" + std::to_string(want.hidden) +
                      ", h1=" + std::to_string(want.predictor) +
                      ", N=" + std::to_string(want.ways) + ")");
  }
}

// Mean accuracy of one train + evaluate run.
meta::EvalReport train_and_evaluate(const Graph& g, const meta::TrainConfig& cfg) {
  const auto trained = meta::train(g, cfg);
  return meta::evaluate(g, trained.params, cfg);
}

int cmd_gen_data(const SbmParams& params, const fs::path& out) {
  const Graph g = generate_sbm(params);
  dump_graph(g, GraphFiles::in_dir(out));
  std::size_t within = 0;
  for (auto [u, v] : g.edge_list()) {
    if (g.label(u) == g.label(v)) ++within;
  }
  std::cout << "nodes=" << g.num_nodes() << " edges=" << g.num_edges() << " within_class_edges=" << within
            << " between_class_edges=" << g.num_edges() - within << " features=" << g.feature_dim()
            << " classes=" << params.classes << " split=" << g.splits().train.size() << "/"
            << g.splits().val.size() << "/" << g.splits().test.size() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& rc) {
  const Graph g = load_graph(GraphFiles::in_dir(rc.data_dir));
  fs::create_directories(rc.out_dir);
  write_text(rc.out_dir / "config.json", to_json(rc).dump(2) + "\n");

  auto log = open_out(rc.out_dir / "episodes.csv");
  log << episode_csv_header() << '\n';
  std::ofstream val_log;
  meta::TrainHooks hooks;
  hooks.on_episode = [&](const meta::EpisodeLog& e) {
    log << episode_csv_row(e) << '\n';
    if (e.skipped) std::cerr << "episode " << e.episode << " skipped: " << e.note << "\n";
  };
  hooks.on_checkpoint = [&](std::size_t episode, const nn::ParamSet& p) {
    nn::save_checkpoint(p, rc.out_dir / "checkpoints" / ("episode_" + std::to_string(episode) + ".bin"));
  };
  hooks.on_validation = [&](std::size_t episode, const meta::EvalReport& r) {
    if (!val_log.is_open()) {
      val_log = open_out(rc.out_dir / "validation.csv");
      val_log << "episode,mean,std\n";
    }
    val_log << episode << ',' << format_double(r.mean) << ',' << format_double(r.std) << '\n';
  };
  const auto result = meta::train(g, rc.train, hooks);
  nn::save_checkpoint(result.params, rc.out_dir / "final.bin");

  double acc = 0.0;
  std::size_t counted = 0;
  for (const auto& e : result.episodes) {
    if (!e.skipped) {
      acc += e.query_acc;
      ++counted;
    }
  }
  std::cout << "trained " << result.episodes.size() << " episodes";
  if (counted > 0) std::cout << ", mean query accuracy " << acc / static_cast<double>(counted);
  std::cout << "; checkpoint " << (rc.out_dir / "final.bin").string() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& rc, const fs::path& checkpoint, const fs::path& report_path,
             const std::string& split, std::size_t tasks) {
  const Graph g = load_graph(GraphFiles::in_dir(rc.data_dir));
  const nn::ParamSet params = nn::load_checkpoint(checkpoint);
  check_dims(params, g, rc.train);
  const auto report = meta::evaluate(g, params, rc.train, split, tasks);
  ordered_json doc = to_json(report);
  doc["checkpoint"] = checkpoint.string();
  doc["config"] = to_json(rc);
  const fs::path out = report_path.empty() ? rc.out_dir / "report.json" : report_path;
  write_text(out, doc.dump(2) + "\n");
  std::cout << "mean accuracy " << report.mean << " +- " << report.std << " over "
            << report.accuracies.size() << " " << split << " tasks; report " << out.string() << "\n";
  return kOk;
}

int cmd_propagate(const RunConfig& rc, const std::string& split, std::uint64_t index,
                  const fs::path& out_path) {
  const Graph g = load_graph(GraphFiles::in_dir(rc.data_dir));
  const auto& cfg = rc.train;
  MetaTask task;
  if (split == "train") {
    const auto pool = build_pool(g, cfg.labels_per_class, cfg.seed);
    Rng rng(cfg.seed, {stream::kTrainTask, index});
    task = sample_train_task(pool, cfg.ways, cfg.shots, cfg.query_size, rng);
  } else if (split == "test" || split == "val") {
    Rng rng(cfg.seed, {split == "test" ? stream::kTestTask : stream::kValTask, index});
    task = sample_task(g, split == "test" ? g.splits().test : g.splits().val, cfg.ways, cfg.shots,
                       cfg.query_size, rng);
  } else {
    throw ConfigError("--split must be train, val or test");
  }
  Rng sub_rng(cfg.seed, {stream::kSubgraph, index, 2});
  const auto prop = poisson::propagate(g, task, cfg.poisson, sub_rng);

  ordered_json doc;
  doc["split"] = split;
  doc["task_index"] = index;
  doc["class_ids"] = task.class_ids;
  auto pairs = [](const std::vector<LabeledNode>& v) {
    json arr = json::array();
    for (const auto& e : v) arr.push_back({e.node, e.label});
    return arr;
  };
  doc["support"] = pairs(task.support);
  doc["query"] = pairs(task.query);
  doc["node_ids"] = prop.subgraph.node_ids;
  doc["random_requested"] = prop.subgraph.random_requested;
  doc["random_sampled"] = prop.subgraph.random_sampled;
  json u = json::array();
  for (Eigen::Index i = 0; i < prop.u.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < prop.u.cols(); ++j) row.push_back(prop.u(i, j));
    u.push_back(row);
  }
  doc["U"] = u;
  doc["entropy"] = std::vector<double>(prop.entropy.data(), prop.entropy.data() + prop.entropy.size());
  json pseudo = json::array();
  for (const auto& p : prop.pseudo) {
    pseudo.push_back({{"node", p.node},
                      {"label", p.local_label},
                      {"entropy", p.entropy},
                      {"correct", g.label(p.node) == task.class_ids[p.local_label]}});
  }
  doc["pseudo"] = pseudo;
  if (auto precision = meta::pseudo_precision(g, task, prop.pseudo)) doc["precision"] = *precision;
  if (prop.pseudo.size() < cfg.poisson.num_pseudo) {
    std::cerr << "warning: only " << prop.pseudo.size() << " pseudo-label candidates (M="
              << cfg.poisson.num_pseudo << ")\n";
  }

  const std::string text = doc.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t features, std::size_t ways, double eps, double tol) {
  auto fixture = make_gradcheck_fixture(seed, features, ways);
  const auto paths = run_gradcheck(fixture, eps);
  bool ok = true;
  for (const auto& p : paths) {
    const bool pass = p.result.max_rel_error < tol;
    ok = ok && pass;
    std::cout << p.name << " max_rel_error=" << p.result.max_rel_error << " worst=" << p.result.worst_tensor
              << " coords=" << p.result.coordinates << (pass ? " ok" : " FAIL") << "\n";
  }
  return ok ? kOk : kRuntimeError;
}

int cmd_ablate(const RunConfig& rc, const std::vector<std::uint64_t>& seeds, const fs::path& out_path) {
  const Graph g = load_graph(GraphFiles::in_dir(rc.data_dir));
  std::string csv = "mode,mean,std,per_seed\n";
  for (auto mode : {meta::Ablation::kFull, meta::Ablation::kNoPseudo, meta::Ablation::kNoIb,
                    meta::Ablation::kNeither}) {
    meta::EvalReport pooled;
    std::string per_seed;
    for (auto s : seeds) {
      meta::TrainConfig cfg = rc.train;
      cfg.ablation = mode;
      cfg.seed = s;
      const auto r = train_and_evaluate(g, cfg);
      pooled.accuracies.push_back(r.mean);
      if (!per_seed.empty()) per_seed += ';';
      per_seed += format_double(r.mean);
    }
    meta::summarize(pooled);
    csv += meta::to_string(mode) + "," + format_double(pooled.mean) + "," + format_double(pooled.std) +
           "," + per_seed + "\n";
    std::cout << meta::to_string(mode) << " " << pooled.mean << " +- " << pooled.std << "\n";
  }
  const fs::path out = out_path.empty() ? rc.out_dir / "ablation.csv" : out_path;
  write_text(out, csv);
  return kOk;
}

int cmd_sweep(const RunConfig& rc, const std::string& axis, const std::vector<double>& values,
              const std::vector<std::uint64_t>& seeds, const fs::path& out_path) {
  const Graph g = load_graph(GraphFiles::in_dir(rc.data_dir));
  std::string csv = "axis,value,mean,std\n";
  for (double v : values) {
    meta::TrainConfig cfg = rc.train;
    if (axis == "gamma") {
      cfg.gamma = v;
    } else if (axis == "beta") {
      cfg.beta = v;
    } else if (axis == "lambda") {
      cfg.poisson.lambda = v;
    } else if (axis == "R") {
      if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw ConfigError("R values must be non-negative integers");
      }
      cfg.poisson.random_nodes = static_cast<std::size_t>(v);
    } else {
      throw ConfigError("--axis must be one of gamma, beta, lambda, R");
    }
    validate(cfg);
    meta::EvalReport pooled;
    for (auto s : seeds) {
      cfg.seed = s;
      pooled.accuracies.push_back(train_and_evaluate(g, cfg).mean);
    }
    meta::summarize(pooled);
    csv += axis + "," + format_double(v) + "," + format_double(pooled.mean) + "," +
           format_double(pooled.std) + "\n";
    std::cout << axis << "=" << v << " " << pooled.mean << " +- " << pooled.std << "\n";
  }
  const fs::path out = out_path.empty() ? rc.out_dir / ("sweep_" + axis + ".csv") : out_path;
  write_text(out, csv);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Few-shot node classification with Poisson pseudo-labels and IB fine-tuning", "xfnc"};
  app.require_subcommand(1);

  SbmParams sbm;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a stochastic block model dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", sbm.classes)->capture_default_str();
  gen->add_option("--nodes-per-class", sbm.nodes_per_class)->capture_default_str();
  gen->add_option("--p-in", sbm.p_in)->capture_default_str();
  gen->add_option("--p-out", sbm.p_out)->capture_default_str();
  gen->add_option("--feature-dim", sbm.feature_dim)->capture_default_str();
  gen->add_option("--noise-std", sbm.noise_std)->capture_default_str();
  gen->add_option("--seed", sbm.seed)->capture_default_str();
  gen->add_option("--train-classes", sbm.train_classes)->capture_default_str();
  gen->add_option("--val-classes", sbm.val_classes)->capture_default_str();
  gen->add_option("--test-classes", sbm.test_classes)->capture_default_str();

  std::string config_path;
  std::string out_flag;
  std::vector<std::string> sets;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config")->required();
    sub->add_option("--set", sets, "Override a config field (key=value), repeatable");
  };

  auto* train = app.add_subcommand("train", "Meta-train and write checkpoints and the episode log");
  add_config(train);
  train->add_option("--out", out_flag, "Output directory");

  std::string checkpoint;
  std::string report_out;
  std::string split = "test";
  std::size_t tasks = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on meta-test tasks");
  add_config(eval);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--out", report_out, "Report JSON path (default <out_dir>/report.json)");
  eval->add_option("--split", split, "test or val")->capture_default_str();
  eval->add_option("--tasks", tasks, "Number of tasks (default T_test)");

  std::uint64_t task_index = 0;
  std::string prop_out;
  std::string prop_split = "train";
  auto* propagate = app.add_subcommand("propagate", "Dump U, entropies and pseudo-labels for one task");
  add_config(propagate);
  propagate->add_option("--split", prop_split, "train, val or test")->capture_default_str();
  propagate->add_option("--task", task_index, "Task index (stream key)")->capture_default_str();
  propagate->add_option("--out", prop_out, "JSON path (default stdout)");

  std::uint64_t gc_seed = 0;
  std::size_t gc_features = 16;
  std::size_t gc_ways = 5;
  double gc_eps = 1e-5;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss path");
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck->add_option("--features", gc_features)->capture_default_str();
  gradcheck->add_option("--ways", gc_ways)->capture_default_str();
  gradcheck->add_option("--eps", gc_eps)->capture_default_str();
  gradcheck->add_option("--tol", gc_tol)->capture_default_str();

  std::string seeds_text;
  std::string table_out;
  auto* ablate = app.add_subcommand("ablate", "Compare full, no_pseudo, no_ib and neither");
  add_config(ablate);
  ablate->add_option("--seeds", seeds_text, "Comma-separated seeds (default: config seed)");
  ablate->add_option("--out", table_out, "CSV path (default <out_dir>/ablation.csv)");

  std::string axis;
  std::string values_text;
  auto* sweep = app.add_subcommand("sweep", "Accuracy as one hyper-parameter varies");
  add_config(sweep);
  sweep->add_option("--axis", axis, "gamma, beta, lambda or R")->required();
  sweep->add_option("--values", values_text, "Comma-separated values")->required();
  sweep->add_option("--seeds", seeds_text, "Comma-separated seeds (default: config seed)");
  sweep->add_option("--out", table_out, "CSV path (default <out_dir>/sweep_<axis>.csv)");

  std::vector<std::string> argv_store{"xfnc"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(sbm, gen_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_features, gc_ways, gc_eps, gc_tol);

    const RunConfig rc = resolve_config(config_path, sets, "");
    auto seeds = [&] {
      return seeds_text.empty() ? std::vector<std::uint64_t>{rc.train.seed} : parse_seed_list(seeds_text);
    };
    if (train->parsed()) {
      const RunConfig with_out = resolve_config(config_path, sets, out_flag);
      return cmd_train(with_out);
    }
    if (eval->parsed()) return cmd_eval(rc, checkpoint, report_out, split, tasks);
    if (propagate->parsed()) return cmd_propagate(rc, prop_split, task_index, prop_out);
    if (ablate->parsed()) return cmd_ablate(rc, seeds(), table_out);
    if (sweep->parsed()) return cmd_sweep(rc, axis, parse_value_list(values_text), seeds(), table_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace xfnc::cli
