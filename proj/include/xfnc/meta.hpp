#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xfnc/episode.hpp"
#include "xfnc/graph.hpp"
#include "xfnc/ib.hpp"
#include "xfnc/nn.hpp"
#include "xfnc/poisson.hpp"

namespace xfnc::meta {

enum class Ablation { kFull, kNoPseudo, kNoIb, kNeither };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

inline bool uses_pseudo(Ablation a) { return a == Ablation::kFull || a == Ablation::kNoIb; }
inline bool uses_ib(Ablation a) { return a == Ablation::kFull || a == Ablation::kNoPseudo; }

struct TrainConfig {
  std::size_t ways = 5;           // N
  std::size_t shots = 3;          // K
  std::size_t query_size = 10;    // |Q| over all classes
  poisson::PoissonConfig poisson;
  std::size_t finetune_steps = 40;  // T
  double alpha = 0.1;
  // Inner-loop step uses the gradient of the summed loss divided by |S~|
  // when true. With the literal sum, alpha = 0.1 diverges on ~35 nodes.
  bool finetune_mean = true;
  double beta = 1.0;
  double beta1 = 0.005;
  double beta2 = 0.005;
  double gamma = 0.1;
  double dropout = 0.5;
  bool dropout_target = true;
  std::size_t hidden = 64;
  std::size_t predictor_hidden = 128;
  std::size_t labels_per_class = 5;
  std::size_t train_episodes = 5000;
  std::size_t test_tasks = 500;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kFull;
  // During meta-training, V_s only admits nodes of training classes and
  // unlabeled nodes unless this is set.
  bool train_propagation_all_nodes = false;
  std::size_t val_interval = 0;  // 0 disables validation
  std::size_t val_tasks = 50;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::size_t workers = 1;

  ib::LossConfig loss_config(bool train) const;
};

struct EpisodeLog {
  std::size_t episode = 0;
  bool skipped = false;
  std::string note;
  std::size_t support_size = 0;
  std::optional<double> pseudo_precision;
  double loss_y = 0.0;
  double loss_d = 0.0;
  double loss = 0.0;
  double query_acc = 0.0;
  std::uint64_t phi_checksum = 0;
};

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::string split = "test";
};

// Mean and population standard deviation of a per-task list.
void summarize(EvalReport& report);

// Fraction of pseudo-labels whose true class matches the task class they were
// assigned; empty when there are none.
std::optional<double> pseudo_precision(const Graph& g, const MetaTask& task,
                                       std::span<const poisson::PseudoLabel> pseudo);

// Support set for one task: Poisson-augmented unless the ablation disables it.
poisson::AugmentedSupport augmented_support(const Graph& g, const MetaTask& task,
                                            const TrainConfig& cfg, Rng& rng,
                                            const poisson::NodeFilter& admit,
                                            std::vector<poisson::PseudoLabel>* pseudo = nullptr);

// T full-batch gradient steps on S~ updating theta only. Returns the adapted
// copy; theta0 and phi are untouched. Throws on a non-finite loss.
nn::ThetaParams fine_tune(ib::EgoCache& cache, const nn::ThetaParams& theta0,
                          const nn::PhiParams& phi, std::span<const LabeledNode> support,
                          const TrainConfig& cfg, std::uint64_t episode);

// Augment, fine-tune, then apply the query-set meta-update
//   theta -= beta1 * grad_theta L(Q; theta_T),  phi -= beta2 * grad_phi L_D(Q; theta_T)
// with the gradients evaluated at theta_T (first-order).
EpisodeLog meta_step(ib::EgoCache& cache, nn::ParamSet& params, const MetaTask& task,
                     const TrainConfig& cfg, std::uint64_t episode, Rng& subgraph_rng);

struct TrainHooks {
  std::function<void(const EpisodeLog&)> on_episode;
  std::function<void(std::size_t episode, const nn::ParamSet&)> on_checkpoint;
  std::function<void(std::size_t episode, const EvalReport&)> on_validation;
};

struct TrainResult {
  nn::ParamSet params;
  std::vector<EpisodeLog> episodes;
};

nn::Dims model_dims(const Graph& g, const TrainConfig& cfg);

TrainResult train(const Graph& g, const TrainConfig& cfg, const TrainHooks& hooks = {});

// Fine-tunes a fresh copy of theta per task and classifies the query set.
// `split` selects the class pool ("test" or "val"); `tasks` overrides
// cfg.test_tasks when nonzero.
EvalReport evaluate(const Graph& g, const nn::ParamSet& params, const TrainConfig& cfg,
                    const std::string& split = "test", std::size_t tasks = 0);

// Accuracy of reading query labels straight off U, with the query nodes
// placed in V_s as unlabeled nodes. No learned parameters involved.
double poisson_only_baseline(const Graph& g, const MetaTask& task, const TrainConfig& cfg,
                             Rng& rng);

}  // namespace xfnc::meta
