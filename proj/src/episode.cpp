#include "xfnc/episode.hpp"

#include <algorithm>
#include <string>

#include <json.hpp>

#include "xfnc/error.hpp"

namespace xfnc {

namespace {

std::size_t per_class_query(std::size_t n_way, std::size_t k_shot, std::size_t q_total) {
  if (n_way == 0 || k_shot == 0) throw Error("task needs N >= 1 and K >= 1");
  if (q_total % n_way != 0) {
    throw Error("query size " + std::to_string(q_total) + " is not divisible by N=" +
                std::to_string(n_way));
  }
  return q_total / n_way;
}

// Shared by the train and test samplers: `members(i)` yields the candidate
// nodes of candidate class i.
template <class Members>
MetaTask draw(std::span<const ClassId> classes, Members&& members, std::size_t n_way,
              std::size_t k_shot, std::size_t q_total, Rng& rng) {
  const std::size_t q_per = per_class_query(n_way, k_shot, q_total);
  if (classes.size() < n_way) {
    throw Error("need " + std::to_string(n_way) + " classes, only " +
                std::to_string(classes.size()) + " available");
  }
  std::vector<std::size_t> order(classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.partial_shuffle(order, n_way);

  MetaTask task;
  task.support.reserve(n_way * k_shot);
  task.query.reserve(q_total);
  std::vector<std::vector<NodeId>> drawn;
  for (std::size_t local = 0; local < n_way; ++local) {
    const std::size_t idx = order[local];
    std::span<const NodeId> pool = members(idx);
    if (pool.size() < k_shot + q_per) {
      throw Error("class " + std::to_string(classes[idx]) + " has " +
                  std::to_string(pool.size()) + " usable nodes, task needs " +
                  std::to_string(k_shot + q_per));
    }
    std::vector<NodeId> nodes(pool.begin(), pool.end());
    rng.partial_shuffle(nodes, k_shot + q_per);
    nodes.resize(k_shot + q_per);
    task.class_ids.push_back(classes[idx]);
    drawn.push_back(std::move(nodes));
  }
  for (std::size_t local = 0; local < n_way; ++local) {
    for (std::size_t i = 0; i < k_shot; ++i) task.support.push_back({drawn[local][i], local});
  }
  for (std::size_t local = 0; local < n_way; ++local) {
    for (std::size_t i = k_shot; i < k_shot + q_per; ++i) {
      task.query.push_back({drawn[local][i], local});
    }
  }
  return task;
}

}  // namespace

WeakLabelPool build_pool(const Graph& g, std::size_t labels_per_class, std::uint64_t seed) {
  if (labels_per_class == 0) throw Error("labels_per_class must be positive");
  WeakLabelPool pool;
  pool.labels_per_class = labels_per_class;
  for (ClassId c : g.splits().train) {
    auto members = g.members(c);
    if (members.size() < labels_per_class) {
      throw Error("training class " + std::to_string(c) + " has " +
                  std::to_string(members.size()) + " nodes, fewer than labels_per_class=" +
                  std::to_string(labels_per_class));
    }
    std::vector<NodeId> nodes(members.begin(), members.end());
    Rng rng(seed, {stream::kPool, static_cast<std::uint64_t>(c)});
    rng.partial_shuffle(nodes, labels_per_class);
    nodes.resize(labels_per_class);
    std::sort(nodes.begin(), nodes.end());
    pool.classes.emplace_back(c, std::move(nodes));
  }
  return pool;
}

std::string pool_to_json(const WeakLabelPool& pool) {
  // Keys are emitted in pool order, not lexicographic order.
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [c, nodes] : pool.classes) doc[std::to_string(c)] = nodes;
  return doc.dump();
}

WeakLabelPool pool_from_json(const std::string& text) {
  WeakLabelPool pool;
  try {
    auto doc = nlohmann::ordered_json::parse(text);
    if (!doc.is_object()) throw Error("pool JSON must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      std::size_t used = 0;
      const int c = std::stoi(it.key(), &used);
      if (used != it.key().size()) throw Error("bad class id key '" + it.key() + "'");
      auto nodes = it.value().get<std::vector<NodeId>>();
      if (pool.classes.empty()) {
        pool.labels_per_class = nodes.size();
      } else if (nodes.size() != pool.labels_per_class) {
        throw Error("class " + it.key() + " has a different number of labeled nodes");
      }
      pool.classes.emplace_back(static_cast<ClassId>(c), std::move(nodes));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("pool JSON: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error("pool JSON: class id keys must be integers");
  }
  return pool;
}

MetaTask sample_train_task(const WeakLabelPool& pool, std::size_t n_way, std::size_t k_shot,
                           std::size_t q_total, Rng& rng) {
  std::vector<ClassId> classes;
  for (const auto& entry : pool.classes) classes.push_back(entry.first);
  return draw(
      classes, [&](std::size_t i) { return std::span<const NodeId>(pool.classes[i].second); },
      n_way, k_shot, q_total, rng);
}

MetaTask sample_task(const Graph& g, std::span<const ClassId> classes, std::size_t n_way,
                     std::size_t k_shot, std::size_t q_total, Rng& rng) {
  return draw(
      classes, [&](std::size_t i) { return g.members(classes[i]); }, n_way, k_shot, q_total,
      rng);
}

}  // namespace xfnc
