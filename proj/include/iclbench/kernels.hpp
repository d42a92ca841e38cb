#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "iclbench/feature_map.hpp"

// Attention and GEMM kernels in two flavours:
//   kernels::ref  serial, written for clarity; the test oracle.
//   kernels::omp  OpenMP-parallel production kernels used by the model.
// Q, K, V and outputs are contiguous [batch, heads, T, head_dim] buffers;
// (batch, head) pairs are independent groups.
namespace iclbench::kernels {

struct AttentionDims {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t seq = 1;
  std::size_t head_dim = 1;

  std::size_t groups() const { return batch * heads; }
  std::size_t numel() const { return groups() * seq * head_dim; }
};

// Whether the recurrent backward keeps every prefix state S_t from the
// forward pass or rebuilds them with a second forward sweep.
enum class StateMode { Store, Recompute };

template <class Real>
struct LinearAttentionCache {
  std::size_t feature_dim = 0;
  StateMode mode = StateMode::Store;
  std::vector<Real> qf;      // [G, T, d_phi]
  std::vector<Real> kf;      // [G, T, d_phi]
  std::vector<Real> denom;   // [G, T]
  std::vector<Real> states;  // [G, T, d_phi, d_head], Store mode only
};

namespace ref {

// C = alpha * op(A) * op(B) + beta * C, all row-major; op(A) is m x k.
template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c);

template <class Real>
void softmax_attention_forward(const AttentionDims& dims, std::span<const Real> q,
                               std::span<const Real> k, std::span<const Real> v,
                               std::span<Real> out);

// Gradients are written (not accumulated).
template <class Real>
void softmax_attention_backward(const AttentionDims& dims, std::span<const Real> q,
                                std::span<const Real> k, std::span<const Real> v,
                                std::span<const Real> dout, std::span<Real> dq,
                                std::span<Real> dk, std::span<Real> dv);

// Materialized causal linear attention: builds A[t, j] = phi(q_t/sqrt d) .
// phi(k_j/sqrt d) for j <= t and returns sum_j A v_j / (sum_j A + eps).
template <class Real>
void linear_attention_forward(const AttentionDims& dims, FeatureMapKind kind, Real eps,
                              std::span<const Real> q, std::span<const Real> k,
                              std::span<const Real> v, std::span<Real> out);

template <class Real>
void linear_attention_backward(const AttentionDims& dims, FeatureMapKind kind, Real eps,
                               std::span<const Real> q, std::span<const Real> k,
                               std::span<const Real> v, std::span<const Real> dout,
                               std::span<Real> dq, std::span<Real> dk, std::span<Real> dv);

}  // namespace ref

namespace omp {

template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c);

// probs receives the masked softmax rows [G, T, T] (upper triangle zero).
template <class Real>
void softmax_attention_forward(const AttentionDims& dims, std::span<const Real> q,
                               std::span<const Real> k, std::span<const Real> v,
                               std::span<Real> out, std::span<Real> probs);

template <class Real>
void softmax_attention_backward(const AttentionDims& dims, std::span<const Real> q,
                                std::span<const Real> k, std::span<const Real> v,
                                std::span<const Real> probs, std::span<const Real> dout,
                                std::span<Real> dq, std::span<Real> dk, std::span<Real> dv);

// Recurrent causal linear attention with running state
//   S_t = S_{t-1} + phi(k_t') v_t^T,  z_t = z_{t-1} + phi(k_t'),
//   o_t = phi(q_t')^T S_t / (phi(q_t') . z_t + eps),  x' = x / sqrt(d_head).
// Never forms a T x T matrix. `cache` may be null when no backward follows.
template <class Real>
void linear_attention_forward(const AttentionDims& dims, FeatureMapKind kind, Real eps,
                              std::span<const Real> q, std::span<const Real> k,
                              std::span<const Real> v, std::span<Real> out,
                              LinearAttentionCache<Real>* cache, StateMode mode = StateMode::Store);

template <class Real>
void linear_attention_backward(const AttentionDims& dims, FeatureMapKind kind,
                               std::span<const Real> q, std::span<const Real> k,
                               std::span<const Real> v, std::span<const Real> out,
                               const LinearAttentionCache<Real>& cache,
                               std::span<const Real> dout, std::span<Real> dq,
                               std::span<Real> dk, std::span<Real> dv);

}  // namespace omp
}  // namespace iclbench::kernels
