#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "xfnc/episode.hpp"
#include "xfnc/graph.hpp"
#include "xfnc/rng.hpp"

namespace xfnc::poisson {

using Vector = Eigen::VectorXd;

struct PoissonConfig {
  std::size_t random_nodes = 10;  // R
  double eta = 100.0;
  double lambda = 0.5;
  std::size_t steps = 10;         // T_l
  std::size_t num_pseudo = 20;    // M
  bool normalize_features = false;
  // Keep only the k strongest feature affinities per row (0 disables).
  std::size_t feature_top_k = 0;
};

// Task subgraph for label propagation. Rows/columns 0..support_count-1 are the
// support nodes in task order; the remaining nodes follow in ascending id.
struct PoissonSubgraph {
  std::vector<NodeId> node_ids;
  std::size_t support_count = 0;
  std::size_t ways = 0;
  Matrix a_struct;
  Matrix a_feat;  // empty until build_affinity
  Matrix a;       // empty until build_affinity
  Matrix f;       // ways x support_count, column i = one-hot label of support i
  Vector y_bar;   // mean of the columns of f
  Matrix b;       // ways x |V_s|: [F - y_bar, 0]
  std::size_t random_requested = 0;
  std::size_t random_sampled = 0;
};

// Which nodes may enter V_s besides the support set. An empty function admits
// every node.
using NodeFilter = std::function<bool(NodeId)>;

// V_s = S + 2-hop(S) + R random nodes outside both + 2-hop of the random nodes.
// `include` nodes are forced into V_s (used by the propagation-only baseline to
// place query nodes). Sampling fewer than R nodes when candidates run out is
// reported through random_sampled, not as an error.
PoissonSubgraph assemble_subgraph(const Graph& g, const MetaTask& task, std::size_t random_nodes,
                                  Rng& rng, const NodeFilter& admit = {},
                                  std::span<const NodeId> include = {});

// exp(-eta * ||x_i - x_j||) off the diagonal, zero on it.
Matrix feature_affinity(const Matrix& features, double eta, bool normalize);

// Symmetric top-k sparsification: an entry survives if it is among the k
// largest of its row or of its column.
Matrix sparsify_top_k(const Matrix& affinity, std::size_t k);

Matrix combine(const Matrix& a_struct, const Matrix& a_feat, double lambda);

// Fills a_feat and a from the graph features of node_ids.
void build_affinity(const Graph& g, PoissonSubgraph& sub, const PoissonConfig& cfg);

// T steps of U <- U + D^-1 (B^T - L U) from U = 0. Returns |V_s| x N.
Matrix poisson_iterate(const Matrix& a, const Matrix& b, std::size_t steps);

// Row-softmax entropy of U (natural log).
Vector confidence(const Matrix& u);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);

struct PseudoLabel {
  NodeId node = 0;
  std::size_t local_label = 0;
  double entropy = 0.0;
};

// The (up to) M non-support rows with the lowest entropy, ties by ascending
// global id, labeled by the argmax of their U row.
std::vector<PseudoLabel> select_pseudo(const Matrix& u, const Vector& entropy,
                                       const PoissonSubgraph& sub, std::size_t m);

struct AugmentedEntry {
  NodeId node = 0;
  std::size_t label = 0;
  bool is_pseudo = false;
};

struct AugmentedSupport {
  std::vector<AugmentedEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  std::vector<LabeledNode> labeled() const;
};

AugmentedSupport augment(const MetaTask& task, std::span<const PseudoLabel> pseudo);

// Plain support set, no pseudo-labels.
AugmentedSupport support_only(const MetaTask& task);

struct Propagation {
  PoissonSubgraph subgraph;
  Matrix u;
  Vector entropy;
  std::vector<PseudoLabel> pseudo;
};

// Whole pipeline for one task: assemble, affinity, iterate, score, select.
Propagation propagate(const Graph& g, const MetaTask& task, const PoissonConfig& cfg, Rng& rng,
                      const NodeFilter& admit = {});

}  // namespace xfnc::poisson
