#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "xfnc/graph.hpp"
#include "xfnc/rng.hpp"

namespace xfnc::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "xfnc_" + tag;
    if (info != nullptr) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::pair<NodeId, NodeId>> random_edges(std::size_t n, double p, Rng& rng) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      if (rng.bernoulli(p)) edges.emplace_back(u, v);
    }
  }
  return edges;
}

// Random graph with Gaussian features; every node labeled with class v % classes
// and all classes in the training split.
inline Graph random_graph(std::size_t n, double p, std::size_t d, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed, {stream::kGenerator, 77});
  const auto edges = random_edges(n, p, rng);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  }
  std::vector<ClassId> labels(n);
  for (std::size_t v = 0; v < n; ++v) labels[v] = static_cast<ClassId>(v % classes);
  ClassSplits splits;
  for (std::size_t c = 0; c < classes; ++c) splits.train.push_back(static_cast<ClassId>(c));
  return Graph::build(n, edges, std::move(x), std::move(labels), std::move(splits));
}

inline Matrix dense_adjacency(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Matrix a = Matrix::Zero(n, n);
  for (auto [u, v] : g.edge_list()) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  return a;
}

}  // namespace xfnc::testing
