#include <cmath>

#include <gtest/gtest.h>

#include "xfnc/error.hpp"
#include "xfnc/meta.hpp"

namespace xfnc::meta {
namespace {

Graph small_sbm(std::uint64_t seed = 3, double noise = 0.1) {
  SbmParams p;
  p.classes = 10;
  p.nodes_per_class = 20;
  p.feature_dim = 10;
  p.p_in = 0.2;
  p.p_out = 0.01;
  p.noise_std = noise;
  p.train_classes = 5;
  p.test_classes = 5;
  p.seed = seed;
  return generate_sbm(p);
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = 8;
  c.predictor_hidden = 16;
  c.finetune_steps = 3;
  c.train_episodes = 4;
  c.test_tasks = 5;
  c.seed = 11;
  return c;
}

MetaTask train_task(const Graph& g, const TrainConfig& cfg, std::uint64_t i) {
  const auto pool = build_pool(g, cfg.labels_per_class, cfg.seed);
  Rng rng(cfg.seed, {stream::kTrainTask, i});
  return sample_train_task(pool, cfg.ways, cfg.shots, cfg.query_size, rng);
}

double max_diff(const nn::ThetaParams& a, const nn::ThetaParams& b) {
  std::vector<const nn::Tensor*> bs;
  nn::for_each_tensor(b, [&](const std::string&, const nn::Tensor& t) { bs.push_back(&t); });
  double m = 0.0;
  std::size_t i = 0;
  nn::for_each_tensor(a, [&](const std::string&, const nn::Tensor& t) {
    m = std::max(m, (t - *bs[i++]).cwiseAbs().maxCoeff());
  });
  return m;
}

TEST(Ablation, NamesRoundTrip) {
  for (auto a : {Ablation::kFull, Ablation::kNoPseudo, Ablation::kNoIb, Ablation::kNeither}) {
    EXPECT_EQ(ablation_from_string(to_string(a)), a);
  }
  EXPECT_THROW(ablation_from_string("half"), ConfigError);
  EXPECT_TRUE(uses_pseudo(Ablation::kNoIb));
  EXPECT_FALSE(uses_pseudo(Ablation::kNoPseudo));
  EXPECT_TRUE(uses_ib(Ablation::kNoPseudo));
  EXPECT_FALSE(uses_ib(Ablation::kNeither));
}

TEST(Summarize, PopulationStd) {
  EvalReport r;
  r.accuracies = {0.2, 0.4, 0.6};
  summarize(r);
  EXPECT_NEAR(r.mean, 0.4, 1e-15);
  EXPECT_NEAR(r.std, std::sqrt(0.08 / 3.0), 1e-15);
}

TEST(FineTune, ZeroStepsOrZeroRateIsIdentity) {
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  const auto params = nn::init_params(model_dims(g, cfg), 1);
  const MetaTask task = train_task(g, cfg, 0);
  ib::EgoCache cache(g);
  cfg.finetune_steps = 0;
  EXPECT_EQ(max_diff(fine_tune(cache, params.theta, params.phi, task.support, cfg, 0), params.theta), 0.0);
  cfg.finetune_steps = 3;
  cfg.alpha = 0.0;
  EXPECT_EQ(max_diff(fine_tune(cache, params.theta, params.phi, task.support, cfg, 0), params.theta), 0.0);
}

TEST(FineTune, OneStepMatchesManualUpdate) {
  const Graph g = small_sbm();
  for (auto mode : {Ablation::kFull, Ablation::kNoIb}) {
    for (bool mean : {true, false}) {
      TrainConfig cfg = small_config();
      cfg.finetune_steps = 1;
      cfg.ablation = mode;
      cfg.finetune_mean = mean;
      const auto params = nn::init_params(model_dims(g, cfg), 2);
      const MetaTask task = train_task(g, cfg, 1);
      ib::EgoCache cache(g);
      const auto got = fine_tune(cache, params.theta, params.phi, task.support, cfg, 7);

      const auto res = ib::loss_total(cache, task.support, params.theta, params.phi,
                                      cfg.loss_config(true), {cfg.seed, 7, 1}, uses_ib(mode));
      nn::ThetaParams want = params.theta;
      const double step = mean ? cfg.alpha / static_cast<double>(task.support.size()) : cfg.alpha;
      nn::axpy(want, -step, res.grad_theta);
      EXPECT_LT(max_diff(got, want), 1e-14) << to_string(mode) << " mean=" << mean;
    }
  }
}

TEST(MetaStep, ZeroOuterRatesLeaveParameters) {
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  cfg.beta1 = cfg.beta2 = 0.0;
  auto params = nn::init_params(model_dims(g, cfg), 3);
  const auto before = params;
  ib::EgoCache cache(g);
  Rng rng(0);
  meta_step(cache, params, train_task(g, cfg, 0), cfg, 0, rng);
  EXPECT_EQ(max_diff(params.theta, before.theta), 0.0);
  EXPECT_EQ(nn::checksum(params.phi), nn::checksum(before.phi));
}

TEST(MetaStep, PhiUntouchedWithoutIb) {
  const Graph g = small_sbm();
  for (auto mode : {Ablation::kNoIb, Ablation::kNeither}) {
    TrainConfig cfg = small_config();
    cfg.ablation = mode;
    cfg.beta2 = 0.5;
    auto params = nn::init_params(model_dims(g, cfg), 4);
    const auto before = params;
    ib::EgoCache cache(g);
    Rng rng(1);
    const auto log = meta_step(cache, params, train_task(g, cfg, 2), cfg, 2, rng);
    EXPECT_EQ(params.phi.encoder.w1, before.phi.encoder.w1);
    EXPECT_EQ(params.phi.encoder.w2, before.phi.encoder.w2);
    EXPECT_GT(max_diff(params.theta, before.theta), 0.0);
    EXPECT_EQ(log.loss_d, 0.0);
  }
}

TEST(MetaStep, UpdatesUseQueryGradientsAtAdaptedTheta) {
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  cfg.beta1 = 0.3;
  cfg.beta2 = 0.7;
  auto params = nn::init_params(model_dims(g, cfg), 5);
  const auto before = params;
  const MetaTask task = train_task(g, cfg, 3);

  ib::EgoCache cache(g);
  Rng rng(cfg.seed, {stream::kSubgraph, 3, 0});
  const auto log = meta_step(cache, params, task, cfg, 3, rng);

  // Replay the same episode by hand.
  Rng replay(cfg.seed, {stream::kSubgraph, 3, 0});
  const auto train_set = g.splits().train;
  const poisson::NodeFilter admit = [&](NodeId v) {
    return std::find(train_set.begin(), train_set.end(), g.label(v)) != train_set.end();
  };
  const auto support = augmented_support(g, task, cfg, replay, admit).labeled();
  EXPECT_EQ(support.size(), log.support_size);
  const auto adapted = fine_tune(cache, before.theta, before.phi, support, cfg, 3);
  const ib::NoiseKey key{cfg.seed, 3, cfg.finetune_steps + 1};
  const auto lc = cfg.loss_config(true);
  const auto total = ib::loss_total(cache, task.query, adapted, before.phi, lc, key);
  std::vector<NodeId> ids;
  for (const auto& q : task.query) ids.push_back(q.node);
  const auto ld = ib::loss_d(cache, ids, adapted, before.phi, lc, key);

  nn::ThetaParams theta = before.theta;
  nn::axpy(theta, -cfg.beta1, total.grad_theta);
  nn::PhiParams phi = before.phi;
  nn::axpy(phi, -cfg.beta2, ld.grad_phi);
  EXPECT_LT(max_diff(params.theta, theta), 1e-14);
  EXPECT_LT((params.phi.encoder.w1 - phi.encoder.w1).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((params.phi.encoder.w2 - phi.encoder.w2).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(log.loss, total.loss, 1e-12);
}

TEST(MetaStep, SupportSizePerMode) {
  const Graph g = small_sbm();
  for (auto mode : {Ablation::kFull, Ablation::kNoPseudo, Ablation::kNoIb, Ablation::kNeither}) {
    TrainConfig cfg = small_config();
    cfg.ablation = mode;
    auto params = nn::init_params(model_dims(g, cfg), 6);
    ib::EgoCache cache(g);
    Rng rng(2);
    const auto log = meta_step(cache, params, train_task(g, cfg, 4), cfg, 4, rng);
    if (uses_pseudo(mode)) {
      EXPECT_GT(log.support_size, 15u);
      EXPECT_LE(log.support_size, 35u);
      EXPECT_TRUE(log.pseudo_precision.has_value());
    } else {
      EXPECT_EQ(log.support_size, 15u);
      EXPECT_FALSE(log.pseudo_precision.has_value());
    }
  }
}

TEST(PseudoPrecision, CountsMatchingClasses) {
  const Graph g = small_sbm();
  MetaTask task;
  task.class_ids = {2, 7};
  const std::vector<poisson::PseudoLabel> pseudo = {{40, 0, 0.0}, {41, 1, 0.0}, {140, 1, 0.0}};
  // Nodes 40, 41 belong to class 2; node 140 to class 7.
  EXPECT_NEAR(*pseudo_precision(g, task, pseudo), 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(pseudo_precision(g, task, {}).has_value());
}

TEST(Train, DeterministicAndLogged) {
  const Graph g = small_sbm();
  const TrainConfig cfg = small_config();
  std::size_t seen = 0;
  TrainHooks hooks;
  hooks.on_episode = [&](const EpisodeLog& l) { EXPECT_EQ(l.episode, seen++); };
  const auto a = train(g, cfg, hooks);
  const auto b = train(g, cfg);
  EXPECT_EQ(seen, cfg.train_episodes);
  EXPECT_EQ(max_diff(a.params.theta, b.params.theta), 0.0);
  EXPECT_EQ(nn::checksum(a.params.phi), nn::checksum(b.params.phi));
  ASSERT_EQ(a.episodes.size(), b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    EXPECT_EQ(a.episodes[i].loss, b.episodes[i].loss);
    EXPECT_EQ(a.episodes[i].phi_checksum, b.episodes[i].phi_checksum);
  }
}

TEST(Train, ZeroEpisodesGivesInitialParameters) {
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  cfg.train_episodes = 0;
  const auto r = train(g, cfg);
  const auto init = nn::init_params(model_dims(g, cfg), cfg.seed);
  EXPECT_TRUE(r.episodes.empty());
  EXPECT_EQ(max_diff(r.params.theta, init.theta), 0.0);
}

TEST(Train, CheckpointAndValidationHooks) {
  SbmParams p;
  p.classes = 12;
  p.nodes_per_class = 15;
  p.feature_dim = 12;
  p.train_classes = 6;
  p.val_classes = 5;
  p.test_classes = 1;
  const Graph g = generate_sbm(p);
  TrainConfig cfg = small_config();
  cfg.train_episodes = 4;
  cfg.checkpoint_interval = 2;
  cfg.val_interval = 2;
  cfg.val_tasks = 2;
  std::vector<std::size_t> ckpt, val;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t e, const nn::ParamSet&) { ckpt.push_back(e); };
  hooks.on_validation = [&](std::size_t e, const EvalReport& r) {
    val.push_back(e);
    EXPECT_EQ(r.split, "val");
    EXPECT_EQ(r.accuracies.size(), 2u);
  };
  train(g, cfg, hooks);
  EXPECT_EQ(ckpt, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(val, (std::vector<std::size_t>{2, 4}));
}

TEST(Evaluate, DeterministicAndSingleTaskHasZeroStd) {
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  const auto params = nn::init_params(model_dims(g, cfg), 8);
  const auto a = evaluate(g, params, cfg);
  const auto b = evaluate(g, params, cfg);
  EXPECT_EQ(a.accuracies, b.accuracies);
  EXPECT_EQ(a.accuracies.size(), cfg.test_tasks);
  for (double x : a.accuracies) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  const auto one = evaluate(g, params, cfg, "test", 1);
  EXPECT_EQ(one.accuracies.size(), 1u);
  EXPECT_EQ(one.std, 0.0);
  EXPECT_EQ(one.accuracies[0], a.accuracies[0]);
  EXPECT_THROW(evaluate(g, params, cfg, "train"), Error);
}

TEST(Evaluate, WorkerCountDoesNotChangeResults) {
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  const auto params = nn::init_params(model_dims(g, cfg), 9);
  const auto a = evaluate(g, params, cfg);
  cfg.workers = 3;
  EXPECT_EQ(evaluate(g, params, cfg).accuracies, a.accuracies);
}

TEST(Evaluate, ZeroParametersPredictOneClass) {
  // With every weight zero the encoder output is zero, only the classifier
  // bias moves, and a constant prediction scores exactly 1/N on a balanced
  // query set.
  const Graph g = small_sbm();
  TrainConfig cfg = small_config();
  auto params = nn::init_params(model_dims(g, cfg), 10);
  nn::for_each_tensor(params, [](const std::string&, nn::Tensor& t) { t.setZero(); });
  for (double x : evaluate(g, params, cfg).accuracies) EXPECT_DOUBLE_EQ(x, 0.2);
}

TEST(Baseline, CleanBlocksAreSeparated) {
  SbmParams p;
  p.classes = 5;
  p.nodes_per_class = 20;
  p.feature_dim = 10;
  p.p_in = 0.3;
  p.p_out = 0.0;
  p.noise_std = 0.05;
  p.test_classes = 5;
  const Graph g = generate_sbm(p);
  const TrainConfig cfg = small_config();
  for (std::uint64_t i = 0; i < 5; ++i) {
    Rng task_rng(0, {stream::kTestTask, i});
    const MetaTask task = sample_test_task(g, 5, 3, 10, task_rng);
    Rng rng(0, {stream::kSubgraph, i});
    EXPECT_GE(poisson_only_baseline(g, task, cfg, rng), 0.9);
  }
}

}  // namespace
}  // namespace xfnc::meta
