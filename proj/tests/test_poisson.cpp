#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xfnc/error.hpp"
#include "xfnc/poisson.hpp"

namespace xfnc::poisson {
namespace {

Graph labeled_graph(std::size_t n, std::vector<std::pair<NodeId, NodeId>> edges,
                    std::vector<ClassId> labels, std::size_t d = 2) {
  std::set<ClassId> classes;
  for (ClassId c : labels) {
    if (c != kUnlabeled) classes.insert(c);
  }
  ClassSplits s;
  s.train.assign(classes.begin(), classes.end());
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
  return Graph::build(n, edges, std::move(x), std::move(labels), std::move(s));
}

MetaTask two_way_task(NodeId a, NodeId b) {
  MetaTask t;
  t.class_ids = {0, 1};
  t.support = {{a, 0}, {b, 1}};
  return t;
}

TEST(Assemble, IsolatedSupportWithoutRandomNodes) {
  const Graph g = labeled_graph(5, {{2, 3}}, {0, 1, kUnlabeled, kUnlabeled, kUnlabeled});
  Rng rng(0);
  const auto sub = assemble_subgraph(g, two_way_task(0, 1), 0, rng);
  EXPECT_EQ(sub.node_ids, (std::vector<NodeId>{0, 1}));
  EXPECT_EQ(sub.support_count, 2u);
}

TEST(Assemble, NoRandomNodesMatchesTwoHopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = testing::random_graph(40, 0.06, 3, 2, seed);
    MetaTask t;
    t.class_ids = {0, 1};
    t.support = {{0, 0}, {2, 0}, {1, 1}, {3, 1}};
    Rng rng(seed);
    const auto sub = assemble_subgraph(g, t, 0, rng);
    // Dense two-step reachability.
    const Matrix a = testing::dense_adjacency(g);
    const Matrix reach = a + a * a;
    std::set<NodeId> want;
    for (const auto& s : t.support) {
      for (Eigen::Index v = 0; v < a.rows(); ++v) {
        if (reach(s.node, v) != 0.0) want.insert(static_cast<NodeId>(v));
      }
    }
    for (const auto& s : t.support) want.erase(s.node);
    ASSERT_GE(sub.node_ids.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(sub.node_ids[i], t.support[i].node);
    EXPECT_EQ(std::set<NodeId>(sub.node_ids.begin() + 4, sub.node_ids.end()), want);
    EXPECT_TRUE(std::is_sorted(sub.node_ids.begin() + 4, sub.node_ids.end()));
    EXPECT_EQ(sub.a_struct, induced_adjacency(g, sub.node_ids));
  }
}

TEST(Assemble, SourceMatrixShape) {
  const Graph g = testing::random_graph(30, 0.1, 3, 3, 4);
  MetaTask t;
  t.class_ids = {0, 1, 2};
  t.support = {{0, 0}, {3, 0}, {1, 1}, {4, 1}, {2, 2}, {5, 2}};
  Rng rng(1);
  const auto sub = assemble_subgraph(g, t, 5, rng);
  ASSERT_EQ(sub.b.rows(), 3);
  ASSERT_EQ(sub.b.cols(), static_cast<Eigen::Index>(sub.node_ids.size()));
  EXPECT_LT(sub.b.leftCols(6).rowwise().sum().cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(sub.b.rightCols(sub.b.cols() - 6).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(sub.random_requested, 5u);
  EXPECT_LE(sub.random_sampled, 5u);
}

TEST(Assemble, RandomNodesComeFromOutsideNeighborhood) {
  // Path 0-1-2 plus isolated nodes 3..9; only isolated nodes are candidates.
  std::vector<ClassId> labels(10, kUnlabeled);
  labels[0] = 0;
  labels[2] = 1;
  const Graph g = labeled_graph(10, {{0, 1}, {1, 2}}, labels);
  Rng rng(3);
  const auto sub = assemble_subgraph(g, two_way_task(0, 2), 4, rng);
  EXPECT_EQ(sub.node_ids.size(), 2u + 1u + 4u);
  for (std::size_t i = 3; i < sub.node_ids.size(); ++i) EXPECT_GE(sub.node_ids[i], 3u);
}

TEST(Assemble, FewerCandidatesThanRequestedTakesAll) {
  std::vector<ClassId> labels(5, kUnlabeled);
  labels[0] = 0;
  labels[2] = 1;
  const Graph g = labeled_graph(5, {{0, 1}, {1, 2}}, labels);
  Rng rng(3);
  const auto sub = assemble_subgraph(g, two_way_task(0, 2), 10, rng);
  EXPECT_EQ(sub.random_requested, 10u);
  EXPECT_EQ(sub.random_sampled, 2u);
  EXPECT_EQ(sub.node_ids.size(), 5u);
}

TEST(Assemble, FilterExcludesNodes) {
  std::vector<ClassId> labels = {0, 1, 2, kUnlabeled, 2};
  const Graph g = labeled_graph(5, {{0, 1}, {1, 2}, {1, 3}, {0, 4}}, labels);
  Rng rng(0);
  const auto sub = assemble_subgraph(g, two_way_task(0, 1), 0, rng,
                                     [&](NodeId v) { return g.label(v) != 2; });
  EXPECT_EQ(sub.node_ids, (std::vector<NodeId>{0, 1, 3}));
}

TEST(Affinity, ZeroDistanceAndHalfDistance) {
  const double eta = 100.0;
  Matrix x(3, 2);
  x << 0.0, 0.0, 0.0, 0.0, std::log(2.0) / eta, 0.0;
  const Matrix a = feature_affinity(x, eta, false);
  EXPECT_EQ(a(0, 1), 1.0);
  EXPECT_NEAR(a(0, 2), 0.5, 1e-15);
  EXPECT_EQ(a.diagonal().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a, a.transpose());
  EXPECT_THROW(feature_affinity(x, 0.0, false), Error);
}

TEST(Affinity, MonotoneInDistance) {
  Rng rng(5);
  Matrix x(12, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Matrix a = feature_affinity(x, 2.0, false);
  std::vector<std::pair<double, double>> pairs;
  for (Eigen::Index i = 0; i < 12; ++i) {
    for (Eigen::Index j = i + 1; j < 12; ++j) pairs.emplace_back((x.row(i) - x.row(j)).norm(), a(i, j));
  }
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t k = 1; k < pairs.size(); ++k) EXPECT_LE(pairs[k].second, pairs[k - 1].second);
}

TEST(Affinity, NormalizeUsesUnitRows) {
  Matrix x(2, 2);
  x << 3.0, 0.0, 0.0, 5.0;
  const Matrix a = feature_affinity(x, 1.0, true);
  EXPECT_NEAR(a(0, 1), std::exp(-std::sqrt(2.0)), 1e-15);
}

TEST(Affinity, TopKKeepsStrongestAndStaysSymmetric) {
  Rng rng(2);
  Matrix x(10, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Matrix full = feature_affinity(x, 1.0, false);
  const Matrix sparse = sparsify_top_k(full, 2);
  EXPECT_EQ(sparse, sparse.transpose());
  for (Eigen::Index i = 0; i < 10; ++i) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < 10; ++j) {
      if (j != i) row.push_back(full(i, j));
    }
    std::sort(row.rbegin(), row.rend());
    int kept_top = 0;
    for (Eigen::Index j = 0; j < 10; ++j) {
      if (j != i && sparse(i, j) != 0.0 && full(i, j) >= row[1]) ++kept_top;
    }
    EXPECT_GE(kept_top, 2);
  }
}

TEST(Combine, EndpointsAndMixture) {
  Matrix s(2, 2), f(2, 2);
  s << 0, 1, 1, 0;
  f << 0, 0.25, 0.25, 0;
  EXPECT_EQ(combine(s, f, 1.0), s);
  EXPECT_EQ(combine(s, f, 0.0), f);
  const Matrix m = combine(s, f, 0.5);
  EXPECT_DOUBLE_EQ(m(0, 1), 0.625);
  EXPECT_THROW(combine(s, Matrix::Zero(3, 3), 0.5), Error);
  EXPECT_THROW(combine(s, f, 1.5), Error);
}

TEST(Iterate, ZeroStepsIsZero) {
  const auto inst = oracle::random_poisson_instance(8, 2, 0.3, 1);
  EXPECT_EQ(poisson_iterate(inst.a, inst.b, 0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Iterate, ZeroDegreeThrows) {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 1) = a(1, 0) = 1.0;
  EXPECT_THROW(poisson_iterate(a, Matrix::Zero(2, 3), 1), Error);
}

TEST(Iterate, ConvergesToLeastSquaresOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = oracle::random_poisson_instance(15, 3, 0.4, seed);
    const Matrix u = poisson_iterate(inst.a, inst.b, 2000);
    const Matrix want = oracle::poisson_fixed_point(inst.a, inst.b);
    EXPECT_LT((u - want).cwiseAbs().maxCoeff(), 1e-6) << "seed " << seed;
  }
}

TEST(Iterate, ConservesWeightedSum) {
  const auto inst = oracle::random_poisson_instance(20, 4, 0.3, 9);
  const Eigen::VectorXd d = inst.a.rowwise().sum();
  for (std::size_t t : {1u, 2u, 5u, 10u, 50u}) {
    const Matrix u = poisson_iterate(inst.a, inst.b, t);
    const double scale = d.cwiseAbs().maxCoeff() * std::max(1.0, u.cwiseAbs().maxCoeff());
    EXPECT_LT((d.transpose() * u).cwiseAbs().maxCoeff(), 1e-9 * scale);
  }
}

TEST(Iterate, DisconnectedComponentsTakeTheirLabel) {
  // Two triangles with a pendant each; one labeled node per component.
  Matrix a = Matrix::Zero(8, 8);
  auto edge = [&](int i, int j) { a(i, j) = a(j, i) = 1.0; };
  edge(0, 2); edge(0, 3); edge(2, 3); edge(3, 4);
  edge(1, 5); edge(1, 6); edge(5, 6); edge(6, 7);
  Matrix b = Matrix::Zero(2, 8);
  b(0, 0) = 0.5; b(1, 0) = -0.5;
  b(0, 1) = -0.5; b(1, 1) = 0.5;
  const Matrix u = poisson_iterate(a, b, 1000);
  for (int v : {2, 3, 4}) EXPECT_EQ(argmax(u.row(v)), 0u) << v;
  for (int v : {5, 6, 7}) EXPECT_EQ(argmax(u.row(v)), 1u) << v;
}

TEST(Confidence, UniformAndPeakedRows) {
  Matrix u(2, 4);
  u << 0.3, 0.3, 0.3, 0.3, 800.0, 0.0, 0.0, 0.0;
  const Vector c = confidence(u);
  EXPECT_NEAR(c(0), std::log(4.0), 1e-15);
  EXPECT_EQ(c(1), 0.0);
}

TEST(Confidence, MatchesDirectSummation) {
  Rng rng(8);
  Matrix u(50, 5);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.normal();
  const Vector c = confidence(u);
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    EXPECT_NEAR(c(i), oracle::softmax_entropy(u.row(i)), 1e-12);
    EXPECT_GE(c(i), 0.0);
    EXPECT_LE(c(i), std::log(5.0) + 1e-15);
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  Eigen::RowVectorXd r(4);
  r << 1.0, 3.0, 3.0, 2.0;
  EXPECT_EQ(argmax(r), 1u);
  EXPECT_EQ(argmax(Eigen::RowVectorXd::Zero(3)), 0u);
}

PoissonSubgraph fake_subgraph(std::vector<NodeId> ids, std::size_t support) {
  PoissonSubgraph s;
  s.node_ids = std::move(ids);
  s.support_count = support;
  return s;
}

TEST(Select, IdenticalRowsPickSmallestIds) {
  const auto sub = fake_subgraph({50, 51, 9, 3, 7, 1, 8}, 2);
  const Matrix u = Matrix::Constant(7, 3, 0.1);
  const auto picked = select_pseudo(u, confidence(u), sub, 3);
  ASSERT_EQ(picked.size(), 3u);
  EXPECT_EQ(picked[0].node, 1u);
  EXPECT_EQ(picked[1].node, 3u);
  EXPECT_EQ(picked[2].node, 7u);
}

TEST(Select, MatchesFullSortOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<NodeId> ids(12);
    std::iota(ids.begin(), ids.end(), 100);
    rng.partial_shuffle(ids, ids.size());
    const auto sub = fake_subgraph(ids, 2);
    Matrix u(12, 4);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = std::round(rng.normal() * 2.0) / 2.0;
    const Vector c = confidence(u);
    const auto picked = select_pseudo(u, c, sub, 4);

    std::vector<std::size_t> rows;
    for (std::size_t i = 2; i < 12; ++i) rows.push_back(i);
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      const double ca = c(static_cast<Eigen::Index>(a));
      const double cb = c(static_cast<Eigen::Index>(b));
      return ca != cb ? ca < cb : ids[a] < ids[b];
    });
    ASSERT_EQ(picked.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(picked[k].node, ids[rows[k]]);
      Eigen::Index best = 0;
      u.row(static_cast<Eigen::Index>(rows[k])).maxCoeff(&best);
      EXPECT_EQ(picked[k].local_label, static_cast<std::size_t>(best));
    }
  }
}

TEST(Select, FewerCandidatesTakesAll) {
  const auto sub = fake_subgraph({4, 5, 6}, 2);
  const Matrix u = Matrix::Zero(3, 2);
  EXPECT_EQ(select_pseudo(u, confidence(u), sub, 20).size(), 1u);
}

TEST(Augment, LayoutAndFlags) {
  MetaTask t = two_way_task(4, 7);
  const std::vector<PseudoLabel> p = {{9, 1, 0.1}, {2, 0, 0.2}};
  const auto s = augment(t, p);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_FALSE(s.entries[0].is_pseudo);
  EXPECT_FALSE(s.entries[1].is_pseudo);
  EXPECT_TRUE(s.entries[2].is_pseudo);
  EXPECT_EQ(s.entries[2].node, 9u);
  EXPECT_EQ(s.entries[3].label, 0u);
  EXPECT_EQ(support_only(t).size(), 2u);
}

TEST(Propagate, DefaultsGiveAugmentedSupportOfNkPlusM) {
  SbmParams p;
  p.seed = 2;
  const Graph g = generate_sbm(p);
  Rng task_rng(2);
  const MetaTask t = sample_task(g, g.splits().train, 5, 3, 10, task_rng);
  Rng rng(2, {stream::kSubgraph, 0});
  const auto prop = propagate(g, t, PoissonConfig{}, rng);
  EXPECT_EQ(prop.pseudo.size(), 20u);
  EXPECT_EQ(augment(t, prop.pseudo).size(), 35u);
  std::set<NodeId> support;
  for (const auto& s : t.support) support.insert(s.node);
  for (std::size_t k = 0; k < prop.pseudo.size(); ++k) {
    EXPECT_FALSE(support.contains(prop.pseudo[k].node));
    if (k > 0) EXPECT_LE(prop.pseudo[k - 1].entropy, prop.pseudo[k].entropy);
  }
}

}  // namespace
}  // namespace xfnc::poisson
