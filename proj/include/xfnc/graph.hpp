#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace xfnc {

using NodeId = std::uint32_t;
using ClassId = std::int32_t;
using Matrix = Eigen::MatrixXd;

inline constexpr ClassId kUnlabeled = -1;

struct ClassSplits {
  std::vector<ClassId> train;
  std::vector<ClassId> val;
  std::vector<ClassId> test;

  bool operator==(const ClassSplits&) const = default;
};

// Immutable undirected attributed graph. Adjacency is stored in compressed-row
// form with sorted neighbor lists, no self-loops and no duplicates.
class Graph {
 public:
  Graph() = default;

  // Validates and normalizes the inputs: edges are symmetrized, deduplicated
  // and self-loops dropped. Throws xfnc::Error on any invariant violation.
  static Graph build(std::size_t num_nodes, std::span<const std::pair<NodeId, NodeId>> edges,
                     Matrix features, std::vector<ClassId> labels, ClassSplits splits);

  std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const noexcept { return neighbors_.size() / 2; }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {neighbors_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  bool has_edge(NodeId u, NodeId v) const;

  const Matrix& features() const noexcept { return features_; }
  ClassId label(NodeId v) const { return labels_[v]; }
  const std::vector<ClassId>& labels() const noexcept { return labels_; }
  const ClassSplits& splits() const noexcept { return splits_; }

  // Nodes carrying class c, ascending. Empty for unknown classes.
  std::span<const NodeId> members(ClassId c) const;

  // Undirected edges (u < v), ascending.
  std::vector<std::pair<NodeId, NodeId>> edge_list() const;

  bool operator==(const Graph& other) const;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> neighbors_;
  Matrix features_;
  std::vector<ClassId> labels_;
  ClassSplits splits_;
  std::vector<std::pair<ClassId, std::vector<NodeId>>> members_;
};

// Induced 2-hop neighborhood of a node. Local index 0 is the center; the other
// nodes follow in ascending global id.
struct EgoSubgraph {
  std::size_t center = 0;
  std::vector<NodeId> global_ids;
  Matrix adjacency;
  Matrix features;
};

struct GraphFiles {
  std::filesystem::path edges;
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path splits;

  // edges.txt, features.csv, labels.tsv, splits.json inside dir.
  static GraphFiles in_dir(const std::filesystem::path& dir);
};

Graph load_graph(const GraphFiles& files);
void dump_graph(const Graph& g, const GraphFiles& files);

struct SbmParams {
  std::size_t classes = 8;
  std::size_t nodes_per_class = 40;
  double p_in = 0.1;
  double p_out = 0.005;
  std::size_t feature_dim = 16;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  // Class counts per split, assigned round-robin over class ids. All zero
  // puts every class in the training split.
  std::size_t train_classes = 0;
  std::size_t val_classes = 0;
  std::size_t test_classes = 0;
};

// Stochastic block model. Node v belongs to class v / nodes_per_class. Each
// class mean is a unit vector spread over its own block of
// feature_dim / classes coordinates; features add N(0, noise_std^2) noise.
Graph generate_sbm(const SbmParams& params);

// Nodes at shortest-path distance 1..k from `node`, ascending.
std::vector<NodeId> k_hop_neighbors(const Graph& g, NodeId node, std::size_t k);

// Union of the k-hop neighborhoods of every source, ascending.
std::vector<NodeId> k_hop_neighbors(const Graph& g, std::span<const NodeId> sources,
                                    std::size_t k);

EgoSubgraph ego_subgraph(const Graph& g, NodeId node);

// Dense adjacency of the subgraph induced by `nodes`, in the given order.
Matrix induced_adjacency(const Graph& g, std::span<const NodeId> nodes);

}  // namespace xfnc
