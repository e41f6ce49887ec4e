#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "xfnc/graph.hpp"
#include "xfnc/rng.hpp"

namespace xfnc::nn {

using Tensor = Eigen::MatrixXd;  // biases are 1 x n rows
using Row = Eigen::RowVectorXd;

struct Dims {
  std::size_t features = 0;   // d
  std::size_t hidden = 64;    // h
  std::size_t predictor = 128;  // h1
  std::size_t ways = 5;       // N

  bool operator==(const Dims&) const = default;
};

struct EncoderParams {
  Tensor w1;  // d x h
  Tensor w2;  // h x h
};

// Everything updated by fine-tuning: the online encoder, the classifier and
// the predictor.
struct ThetaParams {
  EncoderParams encoder;
  Tensor wc;   // h x N
  Tensor bc;   // 1 x N
  Tensor wp1;  // h x h1
  Tensor bp1;  // 1 x h1
  Tensor wp2;  // h1 x h
  Tensor bp2;  // 1 x h
};

// Target encoder, touched only by the meta-update.
struct PhiParams {
  EncoderParams encoder;
};

struct ParamSet {
  Dims dims;
  ThetaParams theta;
  PhiParams phi;
};

template <class F>
void for_each_tensor(EncoderParams& p, const std::string& prefix, F&& f) {
  f(prefix + "w1", p.w1);
  f(prefix + "w2", p.w2);
}
template <class F>
void for_each_tensor(const EncoderParams& p, const std::string& prefix, F&& f) {
  f(prefix + "w1", p.w1);
  f(prefix + "w2", p.w2);
}

template <class P, class F>
  requires std::is_same_v<std::remove_const_t<P>, ThetaParams>
void for_each_tensor(P& p, F&& f) {
  for_each_tensor(p.encoder, "theta.encoder.", f);
  f(std::string("theta.classifier.w"), p.wc);
  f(std::string("theta.classifier.b"), p.bc);
  f(std::string("theta.predictor.w1"), p.wp1);
  f(std::string("theta.predictor.b1"), p.bp1);
  f(std::string("theta.predictor.w2"), p.wp2);
  f(std::string("theta.predictor.b2"), p.bp2);
}

template <class P, class F>
  requires std::is_same_v<std::remove_const_t<P>, PhiParams>
void for_each_tensor(P& p, F&& f) {
  for_each_tensor(p.encoder, "phi.encoder.", f);
}

template <class P, class F>
  requires std::is_same_v<std::remove_const_t<P>, ParamSet>
void for_each_tensor(P& p, F&& f) {
  for_each_tensor(p.theta, f);
  for_each_tensor(p.phi, f);
}

// Same shapes, all zeros.
ThetaParams zeros_like(const ThetaParams& p);
PhiParams zeros_like(const PhiParams& p);

// dst += scale * src, tensor by tensor.
void axpy(ThetaParams& dst, double scale, const ThetaParams& src);
void axpy(PhiParams& dst, double scale, const PhiParams& src);

bool all_finite(const ParamSet& p);

// FNV-1a over the raw bytes of every tensor; cheap equality fingerprint for logs.
std::uint64_t checksum(const PhiParams& p);
std::uint64_t checksum(const ThetaParams& p);

// Glorot-uniform weights, zero biases.
ParamSet init_params(const Dims& dims, std::uint64_t seed);

// (D + I)^-1/2 (A + I) (D + I)^-1/2.
Tensor normalize_adjacency(const Tensor& adjacency);

// The part of an ego subgraph the encoder actually reads: the center row of the
// normalized adjacency restricted to its nonzero columns, and the matching
// rows of A_hat * X. The second layer only needs those rows of the first.
struct PreparedEgo {
  Row weights;  // 1 x r
  Tensor ax;    // r x d
};

PreparedEgo prepare(const Tensor& adjacency, const Tensor& features, std::size_t center);
PreparedEgo prepare(const EgoSubgraph& ego);

struct EncoderTrace {
  Row weights;
  Tensor ax;
  Tensor pre;   // ax * w1
  Tensor mask;  // dropout scale per entry; empty when no dropout was applied
  Tensor h1;    // relu(pre) with dropout
  Row agg;      // weights * h1
  Row out;      // agg * w2
};

// Two-layer graph convolution, center-node readout:
//   H1 = relu(A_hat X W1), dropout on H1 in train mode, out = (A_hat H1 W2)[center].
Row encode(const EncoderParams& p, const PreparedEgo& ego, double dropout, bool train,
           Rng* rng, EncoderTrace* trace = nullptr);

// Accumulates parameter gradients for d(loss)/d(out) = upstream.
void encode_backward(const EncoderParams& p, const EncoderTrace& trace, const Row& upstream,
                     EncoderParams& grad);

Row classify(const ThetaParams& theta, const Row& h);
// Returns d(loss)/dh and accumulates classifier gradients.
Row classify_backward(const ThetaParams& theta, const Row& h, const Row& upstream,
                      ThetaParams& grad);

struct PredictorTrace {
  Row h;
  Row z;  // h * wp1 + bp1
  Row r;  // relu(z)
};

Row predict_head(const ThetaParams& theta, const Row& h, PredictorTrace* trace = nullptr);
Row predict_head_backward(const ThetaParams& theta, const PredictorTrace& trace,
                          const Row& upstream, ThetaParams& grad);

Row softmax(const Row& s);

struct LossGrad {
  double loss = 0.0;
  Row grad;
};
LossGrad softmax_cross_entropy(const Row& logits, std::size_t label);

struct CosineGrad {
  double loss = 0.0;
  Row grad_p;
  Row grad_target;
};

// Negative cosine similarity; zero loss and zero gradients when either norm is
// below 1e-12.
CosineGrad cosine_loss(const Row& p, const Row& target);

// || p/|p| - q/|q| ||^2.
double normalized_mse(const Row& p, const Row& q);

// One parameter tensor under test: live storage plus its analytic gradient.
struct CheckedTensor {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t coordinates = 0;
};

// Central differences on up to `per_tensor` coordinates of each tensor (all of
// them when the tensor is smaller), picked by a fixed-seed shuffle. Relative
// error is |a - n| / max(|a|, |n|, 1e-6). Throws on a non-finite loss.
GradCheckResult grad_check(const std::function<double()>& loss, std::vector<CheckedTensor> tensors,
                           double eps = 1e-5, std::size_t per_tensor = 200);

// Little-endian binary dump of every named tensor.
void save_checkpoint(const ParamSet& p, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace xfnc::nn
