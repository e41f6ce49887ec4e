#include "xfnc/gradcheck.hpp"

#include "xfnc/error.hpp"
#include "xfnc/rng.hpp"

namespace xfnc {

GradCheckFixture make_gradcheck_fixture(std::uint64_t seed, std::size_t feature_dim,
                                        std::size_t ways, std::size_t hidden,
                                        std::size_t predictor_hidden) {
  constexpr std::size_t kNodes = 12;
  Rng rng(seed, {stream::kGenerator, 0xfeed});
  // Two-level tree under node 0 so that every node is within two hops of it,
  // plus random chords among the non-center nodes.
  std::vector<std::pair<NodeId, NodeId>> edges = {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 5}, {1, 6},
                                                  {2, 7}, {2, 8}, {3, 9}, {3, 10}, {4, 11}};
  for (NodeId u = 1; u < kNodes; ++u) {
    for (NodeId v = u + 1; v < kNodes; ++v) {
      if (rng.bernoulli(0.2)) edges.emplace_back(u, v);
    }
  }
  Matrix features(kNodes, feature_dim);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) features(i, j) = rng.normal();
  }
  std::vector<ClassId> labels(kNodes);
  ClassSplits splits;
  for (std::size_t v = 0; v < kNodes; ++v) labels[v] = static_cast<ClassId>(v % ways);
  for (std::size_t c = 0; c < ways; ++c) splits.train.push_back(static_cast<ClassId>(c));

  GradCheckFixture f;
  f.graph = Graph::build(kNodes, edges, std::move(features), std::move(labels), std::move(splits));
  f.nodes = {{0, 2 % ways}, {1, 0}, {5, 4 % ways}};
  f.loss.gamma = 0.1;
  f.loss.beta = 1.0;
  f.loss.dropout = 0.5;
  f.loss.train = true;
  f.key = {seed, 7, 3};

  // Redraw the parameters until no ReLU input sits within kKinkMargin of
  // zero; a central difference across a kink measures neither side.
  constexpr double kKinkMargin = 1e-4;
  constexpr int kAttempts = 64;
  ib::EgoCache cache(f.graph);
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const std::uint64_t param_seed = attempt == 0 ? seed : Rng(seed, {stream::kInit, 0xfeed,
                                                                      static_cast<std::uint64_t>(attempt)}).next();
    f.params = nn::init_params({feature_dim, hidden, predictor_hidden, ways}, param_seed);
    // Nonzero biases so their gradients are exercised away from zero.
    for (auto* b : {&f.params.theta.bc, &f.params.theta.bp1, &f.params.theta.bp2}) {
      for (Eigen::Index j = 0; j < b->cols(); ++j) (*b)(0, j) = rng.uniform(-0.1, 0.1);
    }
    const auto probe = ib::loss_total(cache, f.nodes, f.params.theta, f.params.phi, f.loss, f.key);
    if (probe.relu_margin >= kKinkMargin) return f;
  }
  throw Error("gradcheck fixture: no parameter draw keeps ReLU inputs away from zero");
}

std::vector<GradCheckPath> run_gradcheck(GradCheckFixture& f, double eps, std::size_t per_tensor) {
  ib::EgoCache cache(f.graph);
  std::vector<NodeId> ids;
  for (const auto& n : f.nodes) ids.push_back(n.node);
  auto& theta = f.params.theta;
  auto& phi = f.params.phi;

  auto checked_theta = [&](const nn::ThetaParams& grad) {
    std::vector<nn::CheckedTensor> out;
    std::vector<const nn::Tensor*> grads;
    nn::for_each_tensor(grad, [&](const std::string&, const nn::Tensor& t) { grads.push_back(&t); });
    std::size_t i = 0;
    nn::for_each_tensor(theta, [&](const std::string& name, nn::Tensor& t) {
      out.push_back({name, &t, grads[i++]});
    });
    return out;
  };
  auto checked_phi = [&](const nn::PhiParams& grad) {
    return std::vector<nn::CheckedTensor>{{"phi.encoder.w1", &phi.encoder.w1, &grad.encoder.w1},
                                          {"phi.encoder.w2", &phi.encoder.w2, &grad.encoder.w2}};
  };

  std::vector<GradCheckPath> out;
  {
    const auto res = ib::loss_y(cache, f.nodes, theta, f.loss, f.key);
    auto fn = [&] { return ib::loss_y(cache, f.nodes, theta, f.loss, f.key).loss; };
    out.push_back({"L_Y/theta", nn::grad_check(fn, checked_theta(res.grad_theta), eps, per_tensor)});
  }
  {
    const auto res = ib::loss_d(cache, ids, theta, phi, f.loss, f.key);
    auto fn = [&] { return ib::loss_d(cache, ids, theta, phi, f.loss, f.key).loss; };
    out.push_back({"L_D/theta", nn::grad_check(fn, checked_theta(res.grad_theta), eps, per_tensor)});
    out.push_back({"L_D/phi", nn::grad_check(fn, checked_phi(res.grad_phi), eps, per_tensor)});
  }
  {
    const auto res = ib::loss_total(cache, f.nodes, theta, phi, f.loss, f.key);
    auto fn = [&] { return ib::loss_total(cache, f.nodes, theta, phi, f.loss, f.key).loss; };
    nn::PhiParams scaled = nn::zeros_like(phi);
    nn::axpy(scaled, f.loss.beta, res.grad_phi);
    out.push_back({"L/theta", nn::grad_check(fn, checked_theta(res.grad_theta), eps, per_tensor)});
    out.push_back({"L/phi", nn::grad_check(fn, checked_phi(scaled), eps, per_tensor)});
  }
  return out;
}

}  // namespace xfnc
