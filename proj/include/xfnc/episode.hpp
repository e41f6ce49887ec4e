#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xfnc/graph.hpp"
#include "xfnc/rng.hpp"

namespace xfnc {

// A node paired with its task-local label in [0, N).
struct LabeledNode {
  NodeId node = 0;
  std::size_t label = 0;

  bool operator==(const LabeledNode&) const = default;
};

// The few labeled nodes available per meta-training class.
struct WeakLabelPool {
  std::size_t labels_per_class = 0;
  // (class id, nodes ascending), in training-split order.
  std::vector<std::pair<ClassId, std::vector<NodeId>>> classes;

  bool operator==(const WeakLabelPool&) const = default;
};

// One N-way K-shot episode. Support holds K nodes of class_ids[0], then K of
// class_ids[1], and so on; the query is laid out the same way.
struct MetaTask {
  std::vector<ClassId> class_ids;
  std::vector<LabeledNode> support;
  std::vector<LabeledNode> query;

  std::size_t ways() const noexcept { return class_ids.size(); }
};

WeakLabelPool build_pool(const Graph& g, std::size_t labels_per_class, std::uint64_t seed);

// JSON object {"<class id>": [node ids]}.
std::string pool_to_json(const WeakLabelPool& pool);
WeakLabelPool pool_from_json(const std::string& text);

// Draws from the pool only. Q_total must be a multiple of N; each class gets
// Q_total / N query nodes.
MetaTask sample_train_task(const WeakLabelPool& pool, std::size_t n_way, std::size_t k_shot,
                           std::size_t q_total, Rng& rng);

// Draws from every labeled node of the given classes (meta-test or validation).
MetaTask sample_task(const Graph& g, std::span<const ClassId> classes, std::size_t n_way,
                     std::size_t k_shot, std::size_t q_total, Rng& rng);

inline MetaTask sample_test_task(const Graph& g, std::size_t n_way, std::size_t k_shot,
                                 std::size_t q_total, Rng& rng) {
  return sample_task(g, g.splits().test, n_way, k_shot, q_total, rng);
}

}  // namespace xfnc
