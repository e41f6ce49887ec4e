#include "xfnc/poisson.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "xfnc/error.hpp"

namespace xfnc::poisson {

PoissonSubgraph assemble_subgraph(const Graph& g, const MetaTask& task, std::size_t random_nodes,
                                  Rng& rng, const NodeFilter& admit,
                                  std::span<const NodeId> include) {
  PoissonSubgraph sub;
  sub.ways = task.ways();
  sub.support_count = task.support.size();

  std::vector<NodeId> support;
  support.reserve(task.support.size());
  for (const auto& s : task.support) support.push_back(s.node);
  std::unordered_set<NodeId> in_support(support.begin(), support.end());

  auto keep = [&](NodeId v) { return !in_support.contains(v) && (!admit || admit(v)); };

  std::vector<NodeId> neighbor_set = k_hop_neighbors(g, support, 2);
  std::vector<char> excluded(g.num_nodes(), 0);
  for (NodeId v : support) excluded[v] = 1;
  for (NodeId v : neighbor_set) excluded[v] = 1;

  std::vector<NodeId> candidates;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (!excluded[v] && (!admit || admit(v))) candidates.push_back(v);
  }
  const std::size_t take = std::min(random_nodes, candidates.size());
  rng.partial_shuffle(candidates, take);
  candidates.resize(take);
  sub.random_requested = random_nodes;
  sub.random_sampled = take;

  std::vector<NodeId> rest;
  for (NodeId v : neighbor_set) {
    if (keep(v)) rest.push_back(v);
  }
  for (NodeId v : candidates) rest.push_back(v);
  for (NodeId v : k_hop_neighbors(g, candidates, 2)) {
    if (keep(v)) rest.push_back(v);
  }
  for (NodeId v : include) {
    if (v >= g.num_nodes()) throw Error("included node " + std::to_string(v) + " out of range");
    if (!in_support.contains(v)) rest.push_back(v);
  }
  std::sort(rest.begin(), rest.end());
  rest.erase(std::unique(rest.begin(), rest.end()), rest.end());

  sub.node_ids = support;
  sub.node_ids.insert(sub.node_ids.end(), rest.begin(), rest.end());
  sub.a_struct = induced_adjacency(g, sub.node_ids);

  const auto ways = static_cast<Eigen::Index>(sub.ways);
  const auto nk = static_cast<Eigen::Index>(sub.support_count);
  sub.f = Matrix::Zero(ways, nk);
  for (Eigen::Index i = 0; i < nk; ++i) {
    sub.f(static_cast<Eigen::Index>(task.support[i].label), i) = 1.0;
  }
  sub.y_bar = nk > 0 ? Vector(sub.f.rowwise().mean()) : Vector::Zero(ways);
  sub.b = Matrix::Zero(ways, static_cast<Eigen::Index>(sub.node_ids.size()));
  sub.b.leftCols(nk) = sub.f.colwise() - sub.y_bar;
  return sub;
}

Matrix feature_affinity(const Matrix& features, double eta, bool normalize) {
  if (!(eta > 0.0)) throw Error("eta must be positive");
  Matrix x = features;
  if (normalize) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double norm = x.row(i).norm();
      if (norm > 0.0) x.row(i) /= norm;
    }
  }
  const Eigen::Index n = x.rows();
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double w = std::exp(-eta * (x.row(i) - x.row(j)).norm());
      out(i, j) = w;
      out(j, i) = w;
    }
  }
  return out;
}

Matrix sparsify_top_k(const Matrix& affinity, std::size_t k) {
  const Eigen::Index n = affinity.rows();
  if (k == 0 || static_cast<Eigen::Index>(k) >= n - 1) return affinity;
  Matrix keep = Matrix::Zero(n, n);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) idx[j] = j;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        const double wa = a == i ? -1.0 : affinity(i, a);
                        const double wb = b == i ? -1.0 : affinity(i, b);
                        return wa != wb ? wa > wb : a < b;
                      });
    for (std::size_t t = 0; t < k; ++t) {
      keep(i, idx[t]) = 1.0;
      keep(idx[t], i) = 1.0;
    }
  }
  Matrix out = affinity.cwiseProduct(keep);
  out.diagonal().setZero();
  return out;
}

Matrix combine(const Matrix& a_struct, const Matrix& a_feat, double lambda) {
  if (a_struct.rows() != a_feat.rows() || a_struct.cols() != a_feat.cols()) {
    throw Error("combine: adjacency shapes differ");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
  if (lambda == 1.0) return a_struct;
  if (lambda == 0.0) return a_feat;
  Matrix a = lambda * a_struct + (1.0 - lambda) * a_feat;
  a.diagonal().setZero();
  return a;
}

void build_affinity(const Graph& g, PoissonSubgraph& sub, const PoissonConfig& cfg) {
  Matrix x(static_cast<Eigen::Index>(sub.node_ids.size()), g.features().cols());
  for (std::size_t i = 0; i < sub.node_ids.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = g.features().row(sub.node_ids[i]);
  }
  sub.a_feat = feature_affinity(x, cfg.eta, cfg.normalize_features);
  if (cfg.feature_top_k > 0) sub.a_feat = sparsify_top_k(sub.a_feat, cfg.feature_top_k);
  sub.a = combine(sub.a_struct, sub.a_feat, cfg.lambda);
}

Matrix poisson_iterate(const Matrix& a, const Matrix& b, std::size_t steps) {
  if (a.rows() != a.cols() || b.cols() != a.rows()) {
    throw Error("poisson_iterate: A must be square and B must have |V_s| columns");
  }
  const Vector d = a.rowwise().sum();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) > 0.0)) {
      throw Error("poisson_iterate: node " + std::to_string(i) +
                  " of the subgraph has zero degree; use lambda < 1 or a connected subgraph");
    }
  }
  const Vector d_inv = d.cwiseInverse();
  const Matrix bt = b.transpose();
  Matrix u = Matrix::Zero(a.rows(), b.rows());
  Matrix residual(u.rows(), u.cols());
  for (std::size_t t = 0; t < steps; ++t) {
    // B^T - L U with L = D - A.
    residual.noalias() = a * u;
    residual += bt - d.asDiagonal() * u;
    u += d_inv.asDiagonal() * residual;
  }
  return u;
}

Vector confidence(const Matrix& u) {
  Vector c(u.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double m = u.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (u.row(i).array() - m).exp().matrix();
    const Eigen::RowVectorXd p = e / e.sum();
    double h = 0.0;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      if (p(j) > 0.0) h -= p(j) * std::log(p(j));
    }
    c(i) = h;
  }
  return c;
}

std::size_t argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  std::size_t best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(j);
  }
  return best;
}

std::vector<PseudoLabel> select_pseudo(const Matrix& u, const Vector& entropy,
                                       const PoissonSubgraph& sub, std::size_t m) {
  std::vector<PseudoLabel> candidates;
  for (std::size_t i = sub.support_count; i < sub.node_ids.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    candidates.push_back({sub.node_ids[i], argmax(u.row(row)), entropy(row)});
  }
  const std::size_t take = std::min(m, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
                      return a.entropy != b.entropy ? a.entropy < b.entropy : a.node < b.node;
                    });
  candidates.resize(take);
  return candidates;
}

std::vector<LabeledNode> AugmentedSupport::labeled() const {
  std::vector<LabeledNode> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back({e.node, e.label});
  return out;
}

AugmentedSupport augment(const MetaTask& task, std::span<const PseudoLabel> pseudo) {
  AugmentedSupport s = support_only(task);
  for (const auto& p : pseudo) s.entries.push_back({p.node, p.local_label, true});
  return s;
}

AugmentedSupport support_only(const MetaTask& task) {
  AugmentedSupport s;
  s.entries.reserve(task.support.size());
  for (const auto& e : task.support) s.entries.push_back({e.node, e.label, false});
  return s;
}

Propagation propagate(const Graph& g, const MetaTask& task, const PoissonConfig& cfg, Rng& rng,
                      const NodeFilter& admit) {
  Propagation out;
  out.subgraph = assemble_subgraph(g, task, cfg.random_nodes, rng, admit);
  build_affinity(g, out.subgraph, cfg);
  out.u = poisson_iterate(out.subgraph.a, out.subgraph.b, cfg.steps);
  out.entropy = confidence(out.u);
  out.pseudo = select_pseudo(out.u, out.entropy, out.subgraph, cfg.num_pseudo);
  return out;
}

}  // namespace xfnc::poisson
