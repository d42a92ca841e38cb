#include "iclbench/attention.hpp"

#include <memory>

namespace iclbench {

std::string_view to_string(FeatureMapKind kind) {
  switch (kind) {
    case FeatureMapKind::Identity: return "identity";
    case FeatureMapKind::Relu: return "relu";
    case FeatureMapKind::SquaredRelu: return "squared_relu";
    case FeatureMapKind::QuadraticPoly: return "quadratic_poly";
  }
  return "?";
}

std::optional<FeatureMapKind> parse_feature_map(std::string_view name) {
  for (auto k : {FeatureMapKind::Identity, FeatureMapKind::Relu, FeatureMapKind::SquaredRelu,
                 FeatureMapKind::QuadraticPoly}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

kernels::AttentionDims attention_dims(const Shape& q, const Shape& k, const Shape& v) {
  if (q.size() != 4 || q != k || q != v) {
    throw ShapeMismatchError("attention expects Q, K, V of one shape [batch, heads, T, d_head]; got " +
                             shape_str(q) + ", " + shape_str(k) + ", " + shape_str(v));
  }
  for (auto s : q) {
    if (s == 0) throw ShapeMismatchError("attention: zero-sized dimension in " + shape_str(q));
  }
  return {q[0], q[1], q[2], q[3]};
}

template <class Real>
Tensor<Real> apply_feature_map(FeatureMapKind kind, const Tensor<Real>& x) {
  if (x.rank() == 0) throw ShapeMismatchError("apply_feature_map: needs rank >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t df = feature_dim(kind, d);
  Shape os = x.shape();
  os.back() = df;
  Tensor<Real> out(os);
  const std::size_t rows = x.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) feature_map(kind, x.ptr() + r * d, d, out.ptr() + r * df);
  return out;
}

template <class Real>
Tensor<Real> quadratic_causal_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                        const Tensor<Real>& v) {
  const auto dims = attention_dims(q.shape(), k.shape(), v.shape());
  Tensor<Real> out(q.shape());
  std::vector<Real> probs(dims.groups() * dims.seq * dims.seq);
  kernels::omp::softmax_attention_forward<Real>(dims, q.data(), k.data(), v.data(), out.data(),
                                                probs);
  return out;
}

template <class Real>
ad::Var<Real> quadratic_causal_attention(const ad::Var<Real>& q, const ad::Var<Real>& k,
                                         const ad::Var<Real>& v) {
  const auto dims = attention_dims(q.shape(), k.shape(), v.shape());
  Tensor<Real> out(q.shape());
  auto probs = std::make_shared<std::vector<Real>>(dims.groups() * dims.seq * dims.seq);
  kernels::omp::softmax_attention_forward<Real>(dims, q.value().data(), k.value().data(),
                                                v.value().data(), out.data(), *probs);
  return q.tape()->record(
      "quadratic_attention", std::move(out), {q, k, v},
      [q, k, v, dims, probs](ad::Tape<Real>& t, const Tensor<Real>& g) {
        Tensor<Real> dq(q.shape()), dk(k.shape()), dv(v.shape());
        kernels::omp::softmax_attention_backward<Real>(dims, q.value().data(), k.value().data(),
                                                       v.value().data(), *probs, g.data(),
                                                       dq.data(), dk.data(), dv.data());
        for (auto [var, grad] : {std::pair{q, &dq}, std::pair{k, &dk}, std::pair{v, &dv}}) {
          if (Tensor<Real>* target = t.grad_target(var)) {
            for (std::size_t i = 0; i < grad->numel(); ++i) (*target)[i] += (*grad)[i];
          }
        }
      });
}

template <class Real>
Tensor<Real> linear_causal_attention_recurrent(const Tensor<Real>& q, const Tensor<Real>& k,
                                               const Tensor<Real>& v, FeatureMapKind kind,
                                               Real eps) {
  const auto dims = attention_dims(q.shape(), k.shape(), v.shape());
  Tensor<Real> out(q.shape());
  kernels::omp::linear_attention_forward<Real>(dims, kind, eps, q.data(), k.data(), v.data(),
                                               out.data(), nullptr);
  return out;
}

template <class Real>
ad::Var<Real> linear_causal_attention_recurrent(const ad::Var<Real>& q, const ad::Var<Real>& k,
                                                const ad::Var<Real>& v, FeatureMapKind kind,
                                                Real eps, kernels::StateMode mode) {
  const auto dims = attention_dims(q.shape(), k.shape(), v.shape());
  Tensor<Real> out(q.shape());
  auto& tape = *q.tape();
  const bool need_grad = tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v);
  std::shared_ptr<kernels::LinearAttentionCache<Real>> cache;
  if (need_grad) cache = std::make_shared<kernels::LinearAttentionCache<Real>>();
  kernels::omp::linear_attention_forward<Real>(dims, kind, eps, q.value().data(),
                                               k.value().data(), v.value().data(), out.data(),
                                               cache.get(), mode);
  auto saved_out = std::make_shared<Tensor<Real>>(need_grad ? out : Tensor<Real>());
  return tape.record(
      "linear_attention", std::move(out), {q, k, v},
      [q, k, v, dims, kind, cache, saved_out](ad::Tape<Real>& t, const Tensor<Real>& g) {
        Tensor<Real> dq(q.shape()), dk(k.shape()), dv(v.shape());
        kernels::omp::linear_attention_backward<Real>(
            dims, kind, q.value().data(), k.value().data(), v.value().data(), saved_out->data(),
            *cache, g.data(), dq.data(), dk.data(), dv.data());
        for (auto [var, grad] : {std::pair{q, &dq}, std::pair{k, &dk}, std::pair{v, &dv}}) {
          if (Tensor<Real>* target = t.grad_target(var)) {
            for (std::size_t i = 0; i < grad->numel(); ++i) (*target)[i] += (*grad)[i];
          }
        }
      });
}

template <class Real>
Tensor<Real> linear_causal_attention_materialized(const Tensor<Real>& q, const Tensor<Real>& k,
                                                  const Tensor<Real>& v, FeatureMapKind kind,
                                                  Real eps) {
  const auto dims = attention_dims(q.shape(), k.shape(), v.shape());
  Tensor<Real> out(q.shape());
  kernels::ref::linear_attention_forward<Real>(dims, kind, eps, q.data(), k.data(), v.data(),
                                               out.data());
  return out;
}

#define ICLBENCH_INSTANTIATE(Real)                                                                \
  template Tensor<Real> apply_feature_map(FeatureMapKind, const Tensor<Real>&);                   \
  template Tensor<Real> quadratic_causal_attention(const Tensor<Real>&, const Tensor<Real>&,      \
                                                   const Tensor<Real>&);                          \
  template ad::Var<Real> quadratic_causal_attention(const ad::Var<Real>&, const ad::Var<Real>&,   \
                                                    const ad::Var<Real>&);                        \
  template Tensor<Real> linear_causal_attention_recurrent(                                        \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, FeatureMapKind, Real);       \
  template ad::Var<Real> linear_causal_attention_recurrent(                                       \
      const ad::Var<Real>&, const ad::Var<Real>&, const ad::Var<Real>&, FeatureMapKind, Real,     \
      kernels::StateMode);                                                                        \
  template Tensor<Real> linear_causal_attention_materialized(                                     \
      const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, FeatureMapKind, Real);

ICLBENCH_INSTANTIATE(float)
ICLBENCH_INSTANTIATE(double)

}  // namespace iclbench
