#pragma once

#include "iclbench/autodiff.hpp"
#include "iclbench/feature_map.hpp"
#include "iclbench/kernels.hpp"
#include "iclbench/tensor.hpp"

namespace iclbench {

// Validates Q, K, V of identical shape [batch, heads, T, d_head].
kernels::AttentionDims attention_dims(const Shape& q, const Shape& k, const Shape& v);

// phi over the last axis: [..., d] -> [..., feature_dim(kind, d)].
template <class Real>
Tensor<Real> apply_feature_map(FeatureMapKind kind, const Tensor<Real>& x);

// Causal softmax attention, softmax(q k^T / sqrt(d_head)) v with positions
// j > t masked out.
template <class Real>
Tensor<Real> quadratic_causal_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                        const Tensor<Real>& v);
template <class Real>
ad::Var<Real> quadratic_causal_attention(const ad::Var<Real>& q, const ad::Var<Real>& k,
                                         const ad::Var<Real>& v);

// Causal kernelized attention through the running (S_t, z_t) recurrence.
template <class Real>
Tensor<Real> linear_causal_attention_recurrent(const Tensor<Real>& q, const Tensor<Real>& k,
                                               const Tensor<Real>& v, FeatureMapKind kind,
                                               Real eps);
template <class Real>
ad::Var<Real> linear_causal_attention_recurrent(
    const ad::Var<Real>& q, const ad::Var<Real>& k, const ad::Var<Real>& v, FeatureMapKind kind,
    Real eps, kernels::StateMode mode = kernels::StateMode::Store);

// The same quantity through an explicit T x T weight matrix. Test oracle for
// the recurrent form; O(T^2).
template <class Real>
Tensor<Real> linear_causal_attention_materialized(const Tensor<Real>& q, const Tensor<Real>& k,
                                                  const Tensor<Real>& v, FeatureMapKind kind,
                                                  Real eps);

}  // namespace iclbench
