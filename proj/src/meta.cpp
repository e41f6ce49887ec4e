#include "xfnc/meta.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <memory>
#include <cmath>
#include <set>
#include <string>
#include <thread>

#include "xfnc/error.hpp"

namespace xfnc::meta {

namespace {

// Evaluation streams live above every training episode index.
constexpr std::uint64_t kEvalEpisodeBase = 1ull << 40;
constexpr std::uint64_t kValEpisodeBase = 1ull << 41;

poisson::NodeFilter training_filter(const Graph& g, const TrainConfig& cfg) {
  if (cfg.train_propagation_all_nodes) return {};
  auto train_classes =
      std::make_shared<std::set<ClassId>>(g.splits().train.begin(), g.splits().train.end());
  return [&g, train_classes](NodeId v) {
    const ClassId c = g.label(v);
    return c == kUnlabeled || train_classes->contains(c);
  };
}

std::span<const ClassId> split_classes(const Graph& g, const std::string& split) {
  if (split == "test") return g.splits().test;
  if (split == "val") return g.splits().val;
  throw Error("unknown split '" + split + "'");
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoPseudo: return "no_pseudo";
    case Ablation::kNoIb: return "no_ib";
    case Ablation::kNeither: return "neither";
  }
  return "full";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "no_pseudo") return Ablation::kNoPseudo;
  if (s == "no_ib") return Ablation::kNoIb;
  if (s == "neither") return Ablation::kNeither;
  throw ConfigError("unknown ablation mode '" + s + "' (full, no_pseudo, no_ib, neither)");
}

ib::LossConfig TrainConfig::loss_config(bool train) const {
  ib::LossConfig lc;
  lc.gamma = gamma;
  lc.beta = beta;
  lc.dropout = dropout;
  lc.dropout_target = dropout_target;
  lc.train = train;
  return lc;
}

void summarize(EvalReport& report) {
  const auto n = static_cast<double>(report.accuracies.size());
  if (report.accuracies.empty()) {
    report.mean = report.std = 0.0;
    return;
  }
  double sum = 0.0;
  for (double a : report.accuracies) sum += a;
  report.mean = sum / n;
  double sq = 0.0;
  for (double a : report.accuracies) sq += (a - report.mean) * (a - report.mean);
  report.std = std::sqrt(sq / n);
}

std::optional<double> pseudo_precision(const Graph& g, const MetaTask& task,
                                       std::span<const poisson::PseudoLabel> pseudo) {
  if (pseudo.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const auto& p : pseudo) {
    if (g.label(p.node) == task.class_ids[p.local_label]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pseudo.size());
}

poisson::AugmentedSupport augmented_support(const Graph& g, const MetaTask& task,
                                            const TrainConfig& cfg, Rng& rng,
                                            const poisson::NodeFilter& admit,
                                            std::vector<poisson::PseudoLabel>* pseudo) {
  if (!uses_pseudo(cfg.ablation)) return poisson::support_only(task);
  auto prop = poisson::propagate(g, task, cfg.poisson, rng, admit);
  auto out = poisson::augment(task, prop.pseudo);
  if (pseudo != nullptr) *pseudo = std::move(prop.pseudo);
  return out;
}

nn::ThetaParams fine_tune(ib::EgoCache& cache, const nn::ThetaParams& theta0,
                          const nn::PhiParams& phi, std::span<const LabeledNode> support,
                          const TrainConfig& cfg, std::uint64_t episode) {
  nn::ThetaParams theta = theta0;
  const ib::LossConfig lc = cfg.loss_config(true);
  const bool use_target = uses_ib(cfg.ablation);
  const double step = cfg.finetune_mean && !support.empty()
                          ? cfg.alpha / static_cast<double>(support.size())
                          : cfg.alpha;
  for (std::size_t t = 1; t <= cfg.finetune_steps; ++t) {
    const ib::NoiseKey key{cfg.seed, episode, t};
    const auto res = ib::loss_total(cache, support, theta, phi, lc, key, use_target, false);
    if (!std::isfinite(res.loss)) {
      throw Error("non-finite fine-tuning loss at episode " + std::to_string(episode) +
                  ", step " + std::to_string(t) + " (L_Y=" + std::to_string(res.loss_y) +
                  ", L_D=" + std::to_string(res.loss_d) + ")");
    }
    nn::axpy(theta, -step, res.grad_theta);
  }
  return theta;
}

EpisodeLog meta_step(ib::EgoCache& cache, nn::ParamSet& params, const MetaTask& task,
                     const TrainConfig& cfg, std::uint64_t episode, Rng& subgraph_rng) {
  const Graph& g = cache.graph();
  EpisodeLog log;
  log.episode = episode;

  std::vector<poisson::PseudoLabel> pseudo;
  const auto support = augmented_support(g, task, cfg, subgraph_rng, training_filter(g, cfg), &pseudo);
  log.support_size = support.size();
  log.pseudo_precision = pseudo_precision(g, task, pseudo);

  const auto labeled = support.labeled();
  const nn::ThetaParams adapted = fine_tune(cache, params.theta, params.phi, labeled, cfg, episode);

  const bool use_ib = uses_ib(cfg.ablation);
  const ib::NoiseKey key{cfg.seed, episode, cfg.finetune_steps + 1};
  const auto q = ib::loss_total(cache, task.query, adapted, params.phi, cfg.loss_config(true), key,
                                use_ib, use_ib);
  log.loss_y = q.loss_y;
  log.loss_d = q.loss_d;
  log.loss = q.loss;

  std::size_t correct = 0;
  for (const auto& node : task.query) {
    if (ib::predict(cache, node.node, adapted) == node.label) ++correct;
  }
  log.query_acc = task.query.empty() ? 0.0
                                     : static_cast<double>(correct) / static_cast<double>(task.query.size());

  nn::axpy(params.theta, -cfg.beta1, q.grad_theta);
  if (use_ib) nn::axpy(params.phi, -cfg.beta2, q.grad_phi);
  log.phi_checksum = nn::checksum(params.phi);
  return log;
}

nn::Dims model_dims(const Graph& g, const TrainConfig& cfg) {
  return nn::Dims{g.feature_dim(), cfg.hidden, cfg.predictor_hidden, cfg.ways};
}

TrainResult train(const Graph& g, const TrainConfig& cfg, const TrainHooks& hooks) {
  TrainResult result;
  result.params = nn::init_params(model_dims(g, cfg), cfg.seed);
  const WeakLabelPool pool = build_pool(g, cfg.labels_per_class, cfg.seed);
  ib::EgoCache cache(g);

  for (std::size_t e = 0; e < cfg.train_episodes; ++e) {
    Rng task_rng(cfg.seed, {stream::kTrainTask, e});
    Rng subgraph_rng(cfg.seed, {stream::kSubgraph, e, 0});
    EpisodeLog log;
    std::optional<MetaTask> task;
    try {
      task = sample_train_task(pool, cfg.ways, cfg.shots, cfg.query_size, task_rng);
    } catch (const Error& err) {
      log.episode = e;
      log.skipped = true;
      log.note = err.what();
      log.phi_checksum = nn::checksum(result.params.phi);
    }
    if (task) {
      try {
        log = meta_step(cache, result.params, *task, cfg, e, subgraph_rng);
      } catch (const Error& err) {
        // meta_step only writes parameters after a successful fine-tune.
        log = EpisodeLog{};
        log.episode = e;
        log.skipped = true;
        log.note = err.what();
        log.phi_checksum = nn::checksum(result.params.phi);
      }
      if (!nn::all_finite(result.params)) {
        throw Error("parameters became non-finite after episode " + std::to_string(e));
      }
    }
    if (hooks.on_episode) hooks.on_episode(log);
    result.episodes.push_back(std::move(log));

    const std::size_t done = e + 1;
    if (cfg.val_interval > 0 && done % cfg.val_interval == 0 && hooks.on_validation &&
        !g.splits().val.empty()) {
      hooks.on_validation(done, evaluate(g, result.params, cfg, "val", cfg.val_tasks));
    }
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(done, result.params);
    }
  }
  return result;
}

EvalReport evaluate(const Graph& g, const nn::ParamSet& params, const TrainConfig& cfg,
                    const std::string& split, std::size_t tasks) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t count = tasks != 0 ? tasks : cfg.test_tasks;
  const auto classes = split_classes(g, split);
  const std::uint64_t base = split == "val" ? kValEpisodeBase : kEvalEpisodeBase;
  const std::uint64_t task_stream = split == "val" ? stream::kValTask : stream::kTestTask;

  EvalReport report;
  report.seed = cfg.seed;
  report.split = split;
  report.accuracies.assign(count, 0.0);

  auto run_range = [&](std::size_t worker, std::size_t stride) {
    ib::EgoCache cache(g);
    for (std::size_t i = worker; i < count; i += stride) {
      Rng task_rng(cfg.seed, {task_stream, i});
      Rng subgraph_rng(cfg.seed, {stream::kSubgraph, base + i, 1});
      const MetaTask task = sample_task(g, classes, cfg.ways, cfg.shots, cfg.query_size, task_rng);
      const auto support = augmented_support(g, task, cfg, subgraph_rng, {});
      const auto labeled = support.labeled();
      const nn::ThetaParams adapted = fine_tune(cache, params.theta, params.phi, labeled, cfg, base + i);
      std::size_t correct = 0;
      for (const auto& q : task.query) {
        if (ib::predict(cache, q.node, adapted) == q.label) ++correct;
      }
      report.accuracies[i] =
          task.query.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(task.query.size());
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, count));
  if (workers == 1) {
    run_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run_range(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  summarize(report);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

double poisson_only_baseline(const Graph& g, const MetaTask& task, const TrainConfig& cfg,
                             Rng& rng) {
  std::vector<NodeId> query;
  for (const auto& q : task.query) query.push_back(q.node);
  auto sub = poisson::assemble_subgraph(g, task, cfg.poisson.random_nodes, rng, {}, query);
  poisson::build_affinity(g, sub, cfg.poisson);
  const Matrix u = poisson::poisson_iterate(sub.a, sub.b, cfg.poisson.steps);

  std::size_t correct = 0;
  for (const auto& q : task.query) {
    const auto it = std::find(sub.node_ids.begin(), sub.node_ids.end(), q.node);
    const auto row = static_cast<Eigen::Index>(it - sub.node_ids.begin());
    if (poisson::argmax(u.row(row)) == q.label) ++correct;
  }
  return task.query.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(task.query.size());
}

}  // namespace xfnc::meta
