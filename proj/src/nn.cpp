#include "xfnc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "xfnc/error.hpp"

namespace xfnc::nn {

namespace {

template <class P>
P zeros_impl(const P& p) {
  P out = p;
  for_each_tensor(out, [](const std::string&, Tensor& t) { t.setZero(); });
  return out;
}

template <class P>
void axpy_impl(P& dst, double scale, const P& src) {
  std::vector<const Tensor*> from;
  for_each_tensor(src, [&](const std::string&, const Tensor& t) { from.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(dst, [&](const std::string& name, Tensor& t) {
    const Tensor& s = *from[i++];
    if (s.rows() != t.rows() || s.cols() != t.cols()) {
      throw Error("axpy: shape mismatch on " + name);
    }
    t += scale * s;
  });
}

template <class P>
std::uint64_t checksum_impl(const P& p) {
  std::uint64_t h = 1469598103934665603ull;
  for_each_tensor(p, [&](const std::string&, const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  });
  return h;
}

Tensor relu(const Tensor& x) { return x.cwiseMax(0.0); }

}  // namespace

ThetaParams zeros_like(const ThetaParams& p) { return zeros_impl(p); }
PhiParams zeros_like(const PhiParams& p) { return zeros_impl(p); }

void axpy(ThetaParams& dst, double scale, const ThetaParams& src) { axpy_impl(dst, scale, src); }
void axpy(PhiParams& dst, double scale, const PhiParams& src) { axpy_impl(dst, scale, src); }

bool all_finite(const ParamSet& p) {
  bool ok = true;
  for_each_tensor(p, [&](const std::string&, const Tensor& t) { ok = ok && t.allFinite(); });
  return ok;
}

std::uint64_t checksum(const PhiParams& p) { return checksum_impl(p); }
std::uint64_t checksum(const ThetaParams& p) { return checksum_impl(p); }

ParamSet init_params(const Dims& dims, std::uint64_t seed) {
  if (dims.features == 0 || dims.hidden == 0 || dims.predictor == 0 || dims.ways == 0) {
    throw Error("init_params: all dimensions must be positive");
  }
  const auto d = static_cast<Eigen::Index>(dims.features);
  const auto h = static_cast<Eigen::Index>(dims.hidden);
  const auto h1 = static_cast<Eigen::Index>(dims.predictor);
  const auto n = static_cast<Eigen::Index>(dims.ways);

  ParamSet p;
  p.dims = dims;
  p.theta.encoder.w1.resize(d, h);
  p.theta.encoder.w2.resize(h, h);
  p.theta.wc.resize(h, n);
  p.theta.bc.resize(1, n);
  p.theta.wp1.resize(h, h1);
  p.theta.bp1.resize(1, h1);
  p.theta.wp2.resize(h1, h);
  p.theta.bp2.resize(1, h);
  p.phi.encoder.w1.resize(d, h);
  p.phi.encoder.w2.resize(h, h);

  Rng rng(seed, {stream::kInit});
  for_each_tensor(p, [&](const std::string& name, Tensor& t) {
    const bool bias = name[name.rfind('.') + 1] == 'b';
    if (bias) {
      t.setZero();
      return;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = rng.uniform(-limit, limit);
    }
  });
  return p;
}

Tensor normalize_adjacency(const Tensor& adjacency) {
  const Eigen::VectorXd scale =
      (adjacency.rowwise().sum().array() + 1.0).rsqrt().matrix();
  Tensor a = adjacency;
  a.diagonal().array() += 1.0;
  return scale.asDiagonal() * a * scale.asDiagonal();
}

PreparedEgo prepare(const Tensor& adjacency, const Tensor& features, std::size_t center) {
  const auto n = adjacency.rows();
  if (n == 0 || static_cast<Eigen::Index>(center) >= n) throw Error("prepare: empty ego subgraph");
  if (features.rows() != n) throw Error("prepare: feature rows do not match adjacency");
  const Eigen::VectorXd scale = (adjacency.rowwise().sum().array() + 1.0).rsqrt().matrix();
  const auto c = static_cast<Eigen::Index>(center);

  std::vector<Eigen::Index> rows;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == c || adjacency(c, j) != 0.0) rows.push_back(j);
  }
  PreparedEgo ego;
  ego.weights.resize(static_cast<Eigen::Index>(rows.size()));
  ego.ax.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Eigen::Index j = rows[k];
    const auto r = static_cast<Eigen::Index>(k);
    ego.weights(r) = scale(c) * (adjacency(c, j) + (j == c ? 1.0 : 0.0)) * scale(j);
    // Row j of A_hat * X.
    Row acc = Row::Zero(features.cols());
    for (Eigen::Index m = 0; m < n; ++m) {
      const double a = adjacency(j, m) + (m == j ? 1.0 : 0.0);
      if (a != 0.0) acc += (scale(j) * a * scale(m)) * features.row(m);
    }
    ego.ax.row(r) = acc;
  }
  return ego;
}

PreparedEgo prepare(const EgoSubgraph& ego) {
  return prepare(ego.adjacency, ego.features, ego.center);
}

Row encode(const EncoderParams& p, const PreparedEgo& ego, double dropout, bool train, Rng* rng,
           EncoderTrace* trace) {
  if (ego.ax.cols() != p.w1.rows()) {
    throw Error("encode: ego features have dimension " + std::to_string(ego.ax.cols()) +
                ", encoder expects " + std::to_string(p.w1.rows()));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("encode: dropout must lie in [0, 1)");

  Tensor pre = ego.ax * p.w1;
  Tensor h1 = relu(pre);
  Tensor mask;
  if (train && dropout > 0.0) {
    if (rng == nullptr) throw Error("encode: dropout in train mode needs a generator");
    const double keep = 1.0 - dropout;
    const double scale = 1.0 / keep;
    mask.resize(h1.rows(), h1.cols());
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = rng->bernoulli(keep) ? scale : 0.0;
    }
    h1.array() *= mask.array();
  }
  Row agg = ego.weights * h1;
  Row out = agg * p.w2;
  if (trace != nullptr) {
    trace->weights = ego.weights;
    trace->ax = ego.ax;
    trace->pre = std::move(pre);
    trace->mask = std::move(mask);
    trace->h1 = std::move(h1);
    trace->agg = agg;
    trace->out = out;
  }
  return out;
}

void encode_backward(const EncoderParams& p, const EncoderTrace& trace, const Row& upstream,
                     EncoderParams& grad) {
  if (upstream.size() != trace.out.size()) throw Error("encode_backward: upstream size mismatch");
  grad.w2.noalias() += trace.agg.transpose() * upstream;
  const Row d_agg = upstream * p.w2.transpose();
  Tensor d_pre = trace.weights.transpose() * d_agg;
  if (trace.mask.size() != 0) d_pre.array() *= trace.mask.array();
  d_pre.array() *= (trace.pre.array() > 0.0).cast<double>();
  grad.w1.noalias() += trace.ax.transpose() * d_pre;
}

Row classify(const ThetaParams& theta, const Row& h) { return h * theta.wc + theta.bc; }

Row classify_backward(const ThetaParams& theta, const Row& h, const Row& upstream,
                      ThetaParams& grad) {
  grad.wc.noalias() += h.transpose() * upstream;
  grad.bc += upstream;
  return upstream * theta.wc.transpose();
}

Row predict_head(const ThetaParams& theta, const Row& h, PredictorTrace* trace) {
  Row z = h * theta.wp1 + theta.bp1;
  Row r = z.cwiseMax(0.0);
  Row p = r * theta.wp2 + theta.bp2;
  if (trace != nullptr) {
    trace->h = h;
    trace->z = std::move(z);
    trace->r = std::move(r);
  }
  return p;
}

Row predict_head_backward(const ThetaParams& theta, const PredictorTrace& trace,
                          const Row& upstream, ThetaParams& grad) {
  grad.wp2.noalias() += trace.r.transpose() * upstream;
  grad.bp2 += upstream;
  Row dz = upstream * theta.wp2.transpose();
  dz.array() *= (trace.z.array() > 0.0).cast<double>();
  grad.wp1.noalias() += trace.h.transpose() * dz;
  grad.bp1 += dz;
  return dz * theta.wp1.transpose();
}

Row softmax(const Row& s) {
  const double m = s.maxCoeff();
  Row e = (s.array() - m).exp().matrix();
  return e / e.sum();
}

LossGrad softmax_cross_entropy(const Row& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) {
    throw Error("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
  }
  const auto y = static_cast<Eigen::Index>(label);
  const double m = logits.maxCoeff();
  const double log_sum = std::log((logits.array() - m).exp().sum()) + m;
  LossGrad out;
  out.loss = log_sum - logits(y);
  out.grad = softmax(logits);
  out.grad(y) -= 1.0;
  return out;
}

CosineGrad cosine_loss(const Row& p, const Row& target) {
  if (p.size() != target.size()) throw Error("cosine_loss: size mismatch");
  CosineGrad out;
  out.grad_p = Row::Zero(p.size());
  out.grad_target = Row::Zero(target.size());
  const double np = p.norm();
  const double nt = target.norm();
  if (np < 1e-12 || nt < 1e-12) return out;
  const double cos = p.dot(target) / (np * nt);
  out.loss = -cos;
  out.grad_p = -(target / (np * nt) - cos * p / (np * np));
  out.grad_target = -(p / (np * nt) - cos * target / (nt * nt));
  return out;
}

double normalized_mse(const Row& p, const Row& q) {
  return (p / p.norm() - q / q.norm()).squaredNorm();
}

GradCheckResult grad_check(const std::function<double()>& loss, std::vector<CheckedTensor> tensors,
                           double eps, std::size_t per_tensor) {
  GradCheckResult result;
  auto evaluate = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw Error("grad_check: loss is not finite");
    return v;
  };
  evaluate();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto& entry = tensors[t];
    Tensor& value = *entry.value;
    const Tensor& grad = *entry.grad;
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      throw Error("grad_check: gradient shape mismatch on " + entry.name);
    }
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(value.size()));
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<Eigen::Index>(i);
    if (coords.size() > per_tensor) {
      Rng pick(0x9e3779b97f4a7c15ull, {t});
      pick.partial_shuffle(coords, per_tensor);
      coords.resize(per_tensor);
    }
    for (Eigen::Index k : coords) {
      double& x = value.data()[k];
      const double saved = x;
      x = saved + eps;
      const double plus = evaluate();
      x = saved - eps;
      const double minus = evaluate();
      x = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double analytic = grad.data()[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = entry.name;
      }
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace xfnc::nn
