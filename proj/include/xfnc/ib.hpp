#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>

#include "xfnc/episode.hpp"
#include "xfnc/graph.hpp"
#include "xfnc/nn.hpp"
#include "xfnc/rng.hpp"

namespace xfnc::ib {

struct MaskedEgo {
  EgoSubgraph base;
  Matrix adjacency;
  Matrix features;
};

// Zeroes each upper-triangle adjacency entry (mirrored) and each feature entry
// independently with probability gamma.
MaskedEgo mask_subgraph(const EgoSubgraph& ego, double gamma, Rng& rng);

struct LossConfig {
  double gamma = 0.1;
  double beta = 1.0;
  double dropout = 0.5;
  bool dropout_target = true;  // dropout inside the target encoder as well
  bool train = true;
};

// Identifies the generator streams for one loss evaluation. Dropout and mask
// streams are derived per node from (seed, episode, step, node).
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
  std::uint64_t step = 0;
};

// Ego subgraphs and their prepared clean views, built on first use.
class EgoCache {
 public:
  explicit EgoCache(const Graph& g) : graph_(&g) {}

  struct Entry {
    EgoSubgraph ego;
    nn::PreparedEgo clean;
  };
  const Entry& get(NodeId node);
  const Graph& graph() const noexcept { return *graph_; }

 private:
  const Graph* graph_;
  std::unordered_map<NodeId, Entry> entries_;
};

struct LossResult {
  double loss = 0.0;    // loss_y + beta * loss_d (or the single requested term)
  double loss_y = 0.0;
  double loss_d = 0.0;
  nn::ThetaParams grad_theta;
  nn::PhiParams grad_phi;
  // Smallest |input| seen by any ReLU in this evaluation. Finite differences
  // are unreliable when it is below the step size.
  double relu_margin = std::numeric_limits<double>::infinity();
};

// Sum of cross-entropies of the classifier on the clean view.
LossResult loss_y(EgoCache& cache, std::span<const LabeledNode> nodes, const nn::ThetaParams& theta,
                  const LossConfig& cfg, const NoiseKey& key);

// Sum of negative cosines between the predictor output on the clean view and
// the target encoding of the masked view. Gradients for both groups.
LossResult loss_d(EgoCache& cache, std::span<const NodeId> nodes, const nn::ThetaParams& theta,
                  const nn::PhiParams& phi, const LossConfig& cfg, const NoiseKey& key);

// L = L_Y + beta * L_D. With use_target false only L_Y is evaluated (no masking,
// no target encoder). grad_phi is the gradient of L_D alone, filled only when
// want_phi_grad.
LossResult loss_total(EgoCache& cache, std::span<const LabeledNode> nodes,
                      const nn::ThetaParams& theta, const nn::PhiParams& phi,
                      const LossConfig& cfg, const NoiseKey& key, bool use_target = true,
                      bool want_phi_grad = true);

// Eval-mode argmax of the classifier logits; ties go to the lowest class.
std::size_t predict(EgoCache& cache, NodeId node, const nn::ThetaParams& theta);

}  // namespace xfnc::ib
