#include "xfnc/ib.hpp"

#include <algorithm>
#include <string>

#include "xfnc/error.hpp"
#include "xfnc/poisson.hpp"

namespace xfnc::ib {

namespace {

constexpr std::uint64_t kOnline = 0;
constexpr std::uint64_t kTarget = 1;

struct Terms {
  bool classify = false;
  bool target = false;
  bool phi_grad = false;
  double target_weight = 1.0;
};

// Adds one node's contributions to `out`. The online encoder runs once and
// feeds both the classifier and the predictor, so L_Y and L_D see the same
// dropout mask for a given (key, node).
void accumulate(EgoCache& cache, NodeId node, std::size_t label, const nn::ThetaParams& theta,
                const nn::PhiParams* phi, const LossConfig& cfg, const NoiseKey& key,
                const Terms& terms, LossResult& out) {
  const auto& entry = cache.get(node);
  Rng online_rng(key.seed, {stream::kDropout, key.episode, key.step, node, kOnline});
  nn::EncoderTrace trace;
  const nn::Row h = nn::encode(theta.encoder, entry.clean, cfg.dropout, cfg.train, &online_rng, &trace);
  out.relu_margin = std::min(out.relu_margin, trace.pre.cwiseAbs().minCoeff());
  nn::Row dh = nn::Row::Zero(h.size());

  if (terms.classify) {
    const nn::Row logits = nn::classify(theta, h);
    const auto ce = nn::softmax_cross_entropy(logits, label);
    out.loss_y += ce.loss;
    dh += nn::classify_backward(theta, h, ce.grad, out.grad_theta);
  }

  if (terms.target) {
    Rng mask_rng(key.seed, {stream::kMask, key.episode, key.step, node});
    const MaskedEgo masked = mask_subgraph(entry.ego, cfg.gamma, mask_rng);
    const nn::PreparedEgo view = nn::prepare(masked.adjacency, masked.features, masked.base.center);
    Rng target_rng(key.seed, {stream::kDropout, key.episode, key.step, node, kTarget});
    nn::EncoderTrace target_trace;
    const nn::Row h_target =
        nn::encode(phi->encoder, view, cfg.dropout_target ? cfg.dropout : 0.0, cfg.train,
                   &target_rng, &target_trace);
    out.relu_margin = std::min(out.relu_margin, target_trace.pre.cwiseAbs().minCoeff());

    nn::PredictorTrace ptrace;
    const nn::Row p = nn::predict_head(theta, h, &ptrace);
    out.relu_margin = std::min(out.relu_margin, ptrace.z.cwiseAbs().minCoeff());
    const auto cos = nn::cosine_loss(p, h_target);
    out.loss_d += cos.loss;
    dh += nn::predict_head_backward(theta, ptrace, terms.target_weight * cos.grad_p, out.grad_theta);
    if (terms.phi_grad) {
      nn::encode_backward(phi->encoder, target_trace, cos.grad_target, out.grad_phi.encoder);
    }
  }

  nn::encode_backward(theta.encoder, trace, dh, out.grad_theta.encoder);
}

LossResult empty_result(const nn::ThetaParams& theta, const nn::PhiParams* phi) {
  LossResult r;
  r.grad_theta = nn::zeros_like(theta);
  if (phi != nullptr) r.grad_phi = nn::zeros_like(*phi);
  return r;
}

}  // namespace

MaskedEgo mask_subgraph(const EgoSubgraph& ego, double gamma, Rng& rng) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("mask rate must lie in [0, 1]");
  MaskedEgo m;
  m.base = ego;
  m.adjacency = ego.adjacency;
  m.features = ego.features;
  const Eigen::Index n = m.adjacency.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (rng.bernoulli(gamma)) {
        m.adjacency(i, j) = 0.0;
        m.adjacency(j, i) = 0.0;
      }
    }
  }
  for (Eigen::Index i = 0; i < m.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.features.cols(); ++j) {
      if (rng.bernoulli(gamma)) m.features(i, j) = 0.0;
    }
  }
  return m;
}

const EgoCache::Entry& EgoCache::get(NodeId node) {
  auto it = entries_.find(node);
  if (it != entries_.end()) return it->second;
  Entry e;
  e.ego = ego_subgraph(*graph_, node);
  e.clean = nn::prepare(e.ego);
  return entries_.emplace(node, std::move(e)).first->second;
}

LossResult loss_y(EgoCache& cache, std::span<const LabeledNode> nodes, const nn::ThetaParams& theta,
                  const LossConfig& cfg, const NoiseKey& key) {
  LossResult out = empty_result(theta, nullptr);
  const Terms terms{.classify = true};
  for (const auto& n : nodes) accumulate(cache, n.node, n.label, theta, nullptr, cfg, key, terms, out);
  out.loss = out.loss_y;
  return out;
}

LossResult loss_d(EgoCache& cache, std::span<const NodeId> nodes, const nn::ThetaParams& theta,
                  const nn::PhiParams& phi, const LossConfig& cfg, const NoiseKey& key) {
  LossResult out = empty_result(theta, &phi);
  const Terms terms{.target = true, .phi_grad = true};
  for (NodeId n : nodes) accumulate(cache, n, 0, theta, &phi, cfg, key, terms, out);
  out.loss = out.loss_d;
  return out;
}

LossResult loss_total(EgoCache& cache, std::span<const LabeledNode> nodes,
                      const nn::ThetaParams& theta, const nn::PhiParams& phi,
                      const LossConfig& cfg, const NoiseKey& key, bool use_target,
                      bool want_phi_grad) {
  if (cfg.beta < 0.0) throw Error("beta must be non-negative");
  LossResult out = empty_result(theta, &phi);
  const Terms terms{.classify = true,
                    .target = use_target,
                    .phi_grad = use_target && want_phi_grad,
                    .target_weight = cfg.beta};
  for (const auto& n : nodes) accumulate(cache, n.node, n.label, theta, &phi, cfg, key, terms, out);
  out.loss = out.loss_y + cfg.beta * out.loss_d;
  return out;
}

std::size_t predict(EgoCache& cache, NodeId node, const nn::ThetaParams& theta) {
  const auto& entry = cache.get(node);
  const nn::Row h = nn::encode(theta.encoder, entry.clean, 0.0, false, nullptr);
  return poisson::argmax(nn::classify(theta, h));
}

}  // namespace xfnc::ib
