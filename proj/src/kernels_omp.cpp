#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "iclbench/kernels.hpp"

namespace iclbench::kernels::omp {
namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using CMap = Eigen::Map<const RowMat<Real>>;
template <class Real>
using MMap = Eigen::Map<RowMat<Real>>;

auto idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c) {
  MMap<Real> C(c, idx(m), idx(n));
  // Stored extents of A and B before the op() is applied.
  CMap<Real> A(a, trans_a ? idx(k) : idx(m), trans_a ? idx(m) : idx(k));
  CMap<Real> B(b, trans_b ? idx(n) : idx(k), trans_b ? idx(k) : idx(n));
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (beta == Real(0)) {
      C.noalias() = alpha * (lhs * rhs);
    } else {
      if (beta != Real(1)) C *= beta;
      C.noalias() += alpha * (lhs * rhs);
    }
  };
  if (trans_a && trans_b) run(A.transpose(), B.transpose());
  else if (trans_a) run(A.transpose(), B);
  else if (trans_b) run(A, B.transpose());
  else run(A, B);
}

template <class Real>
void softmax_attention_forward(const AttentionDims& dims, std::span<const Real> q,
                               std::span<const Real> k, std::span<const Real> v,
                               std::span<Real> out, std::span<Real> probs) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  const auto G = static_cast<std::ptrdiff_t>(dims.groups());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t g = 0; g < G; ++g) {
    const auto base = static_cast<std::size_t>(g) * stride;
    CMap<Real> Q(q.data() + base, idx(T), idx(d));
    CMap<Real> K(k.data() + base, idx(T), idx(d));
    CMap<Real> V(v.data() + base, idx(T), idx(d));
    MMap<Real> O(out.data() + base, idx(T), idx(d));
    MMap<Real> P(probs.data() + static_cast<std::size_t>(g) * T * T, idx(T), idx(T));
    P.setZero();
    P.template triangularView<Eigen::Lower>() = (Q * K.transpose()) * scale;
    for (std::size_t t = 0; t < T; ++t) {
      Real* row = P.data() + t * T;
      Real mx = row[0];
      for (std::size_t j = 1; j <= t; ++j) mx = std::max(mx, row[j]);
      Real sum = 0;
      for (std::size_t j = 0; j <= t; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const Real inv = Real(1) / sum;
      for (std::size_t j = 0; j <= t; ++j) row[j] *= inv;
    }
    O.noalias() = P.template triangularView<Eigen::Lower>() * V;
  }
}

template <class Real>
void softmax_attention_backward(const AttentionDims& dims, std::span<const Real> q,
                                std::span<const Real> k, std::span<const Real> v,
                                std::span<const Real> probs, std::span<const Real> dout,
                                std::span<Real> dq, std::span<Real> dk, std::span<Real> dv) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  const auto G = static_cast<std::ptrdiff_t>(dims.groups());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t g = 0; g < G; ++g) {
    const auto base = static_cast<std::size_t>(g) * stride;
    CMap<Real> Q(q.data() + base, idx(T), idx(d));
    CMap<Real> K(k.data() + base, idx(T), idx(d));
    CMap<Real> V(v.data() + base, idx(T), idx(d));
    CMap<Real> dO(dout.data() + base, idx(T), idx(d));
    CMap<Real> P(probs.data() + static_cast<std::size_t>(g) * T * T, idx(T), idx(T));
    MMap<Real> dQ(dq.data() + base, idx(T), idx(d));
    MMap<Real> dK(dk.data() + base, idx(T), idx(d));
    MMap<Real> dV(dv.data() + base, idx(T), idx(d));

    dV.noalias() = P.transpose().template triangularView<Eigen::Upper>() * dO;
    RowMat<Real> dS = RowMat<Real>::Zero(idx(T), idx(T));
    dS.template triangularView<Eigen::Lower>() = dO * V.transpose();
    for (std::size_t t = 0; t < T; ++t) {
      Real* row = dS.data() + t * T;
      const Real* p = P.data() + t * T;
      Real pdp = 0;
      for (std::size_t j = 0; j <= t; ++j) pdp += p[j] * row[j];
      for (std::size_t j = 0; j <= t; ++j) row[j] = p[j] * (row[j] - pdp) * scale;
    }
    dQ.noalias() = dS.template triangularView<Eigen::Lower>() * K;
    dK.noalias() = dS.transpose().template triangularView<Eigen::Upper>() * Q;
  }
}

template <class Real>
void linear_attention_forward(const AttentionDims& dims, FeatureMapKind kind, Real eps,
                              std::span<const Real> q, std::span<const Real> k,
                              std::span<const Real> v, std::span<Real> out,
                              LinearAttentionCache<Real>* cache, StateMode mode) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const std::size_t df = feature_dim(kind, d);
  const std::size_t G = dims.groups();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  if (cache) {
    cache->feature_dim = df;
    cache->mode = mode;
    cache->qf.assign(G * T * df, Real(0));
    cache->kf.assign(G * T * df, Real(0));
    cache->denom.assign(G * T, Real(0));
    if (mode == StateMode::Store) cache->states.assign(G * T * df * d, Real(0));
    else cache->states.clear();
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(G); ++gi) {
    const auto g = static_cast<std::size_t>(gi);
    const std::size_t base = g * stride;
    std::vector<Real> S(df * d, Real(0)), z(df, Real(0)), qf(df), kf(df), tmp(d);
    for (std::size_t t = 0; t < T; ++t) {
      const Real* kt = k.data() + base + t * d;
      const Real* qt = q.data() + base + t * d;
      const Real* vt = v.data() + base + t * d;
      for (std::size_t c = 0; c < d; ++c) tmp[c] = kt[c] * scale;
      feature_map(kind, tmp.data(), d, kf.data());
      for (std::size_t c = 0; c < d; ++c) tmp[c] = qt[c] * scale;
      feature_map(kind, tmp.data(), d, qf.data());

      for (std::size_t f = 0; f < df; ++f) {
        const Real kv = kf[f];
        z[f] += kv;
        Real* srow = S.data() + f * d;
#pragma omp simd
        for (std::size_t c = 0; c < d; ++c) srow[c] += kv * vt[c];
      }
      Real den = eps;
      for (std::size_t f = 0; f < df; ++f) den += qf[f] * z[f];
      Real* ot = out.data() + base + t * d;
      std::fill(ot, ot + d, Real(0));
      for (std::size_t f = 0; f < df; ++f) {
        const Real qv = qf[f];
        const Real* srow = S.data() + f * d;
#pragma omp simd
        for (std::size_t c = 0; c < d; ++c) ot[c] += qv * srow[c];
      }
      const Real inv = Real(1) / den;
      for (std::size_t c = 0; c < d; ++c) ot[c] *= inv;

      if (cache) {
        const std::size_t row = g * T + t;
        std::copy(qf.begin(), qf.end(), cache->qf.begin() + static_cast<std::ptrdiff_t>(row * df));
        std::copy(kf.begin(), kf.end(), cache->kf.begin() + static_cast<std::ptrdiff_t>(row * df));
        cache->denom[row] = den;
        if (mode == StateMode::Store) {
          std::copy(S.begin(), S.end(),
                    cache->states.begin() + static_cast<std::ptrdiff_t>(row * df * d));
        }
      }
    }
  }
}

template <class Real>
void linear_attention_backward(const AttentionDims& dims, FeatureMapKind kind,
                               std::span<const Real> q, std::span<const Real> k,
                               std::span<const Real> v, std::span<const Real> out,
                               const LinearAttentionCache<Real>& cache,
                               std::span<const Real> dout, std::span<Real> dq,
                               std::span<Real> dk, std::span<Real> dv) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const std::size_t df = cache.feature_dim;
  const std::size_t G = dims.groups();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  const bool stored = cache.mode == StateMode::Store;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(G); ++gi) {
    const auto g = static_cast<std::size_t>(gi);
    const std::size_t base = g * stride;
    const Real* qf = cache.qf.data() + g * T * df;
    const Real* kf = cache.kf.data() + g * T * df;
    const Real* den = cache.denom.data() + g * T;
    std::vector<Real> S(stored ? 0 : df * d, Real(0)), z(df, Real(0));
    std::vector<Real> dnum(T * d), dden(T), dqf(df), dkf(df), R(df * d, Real(0)), r(df, Real(0));
    std::vector<Real> tmp(d), gx(d);

    // Forward sweep: gradients w.r.t. phi(q_t) need the prefix states.
    for (std::size_t t = 0; t < T; ++t) {
      const Real* gt = dout.data() + base + t * d;
      const Real* ot = out.data() + base + t * d;
      const Real* kft = kf + t * df;
      for (std::size_t f = 0; f < df; ++f) z[f] += kft[f];
      if (!stored) {
        const Real* vt = v.data() + base + t * d;
        for (std::size_t f = 0; f < df; ++f) {
          Real* srow = S.data() + f * d;
#pragma omp simd
          for (std::size_t c = 0; c < d; ++c) srow[c] += kft[f] * vt[c];
        }
      }
      const Real* St = stored ? cache.states.data() + (g * T + t) * df * d : S.data();
      const Real inv = Real(1) / den[t];
      Real go = 0;
      for (std::size_t c = 0; c < d; ++c) {
        dnum[t * d + c] = gt[c] * inv;
        go += gt[c] * ot[c];
      }
      dden[t] = -go * inv;
      for (std::size_t f = 0; f < df; ++f) {
        const Real* srow = St + f * d;
        Real acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t c = 0; c < d; ++c) acc += srow[c] * dnum[t * d + c];
        dqf[f] = acc + z[f] * dden[t];
      }
      for (std::size_t c = 0; c < d; ++c) tmp[c] = q[base + t * d + c] * scale;
      feature_map_backward(kind, tmp.data(), d, dqf.data(), gx.data());
      for (std::size_t c = 0; c < d; ++c) dq[base + t * d + c] = gx[c] * scale;
    }

    // Reverse sweep: suffix sums of dS_t and dz_t give the key/value grads.
    for (std::size_t tt = T; tt-- > 0;) {
      const Real* qft = qf + tt * df;
      const Real* kft = kf + tt * df;
      const Real* vt = v.data() + base + tt * d;
      const Real* dn = dnum.data() + tt * d;
      for (std::size_t f = 0; f < df; ++f) {
        Real* rrow = R.data() + f * d;
        const Real qv = qft[f];
#pragma omp simd
        for (std::size_t c = 0; c < d; ++c) rrow[c] += qv * dn[c];
        r[f] += qv * dden[tt];
      }
      Real* dvt = dv.data() + base + tt * d;
      std::fill(dvt, dvt + d, Real(0));
      for (std::size_t f = 0; f < df; ++f) {
        const Real* rrow = R.data() + f * d;
        Real acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t c = 0; c < d; ++c) acc += rrow[c] * vt[c];
        dkf[f] = acc + r[f];
        const Real kv = kft[f];
#pragma omp simd
        for (std::size_t c = 0; c < d; ++c) dvt[c] += rrow[c] * kv;
      }
      for (std::size_t c = 0; c < d; ++c) tmp[c] = k[base + tt * d + c] * scale;
      feature_map_backward(kind, tmp.data(), d, dkf.data(), gx.data());
      for (std::size_t c = 0; c < d; ++c) dk[base + tt * d + c] = gx[c] * scale;
    }
  }
}

#define ICLBENCH_INSTANTIATE(Real)                                                              \
  template void gemm<Real>(bool, bool, std::size_t, std::size_t, std::size_t, Real, const Real*, \
                           const Real*, Real, Real*);                                           \
  template void softmax_attention_forward<Real>(const AttentionDims&, std::span<const Real>,    \
                                                std::span<const Real>, std::span<const Real>,   \
                                                std::span<Real>, std::span<Real>);              \
  template void softmax_attention_backward<Real>(                                               \
      const AttentionDims&, std::span<const Real>, std::span<const Real>,                       \
      std::span<const Real>, std::span<const Real>, std::span<const Real>, std::span<Real>,     \
      std::span<Real>, std::span<Real>);                                                        \
  template void linear_attention_forward<Real>(                                                 \
      const AttentionDims&, FeatureMapKind, Real, std::span<const Real>, std::span<const Real>, \
      std::span<const Real>, std::span<Real>, LinearAttentionCache<Real>*, StateMode);          \
  template void linear_attention_backward<Real>(                                                \
      const AttentionDims&, FeatureMapKind, std::span<const Real>, std::span<const Real>,       \
      std::span<const Real>, std::span<const Real>, const LinearAttentionCache<Real>&,           \
      std::span<const Real>, std::span<Real>, std::span<Real>, std::span<Real>);

ICLBENCH_INSTANTIATE(float)
ICLBENCH_INSTANTIATE(double)

}  // namespace iclbench::kernels::omp
