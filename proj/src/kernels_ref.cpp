#include <algorithm>
#include <cmath>
#include <vector>

#include "iclbench/kernels.hpp"

namespace iclbench::kernels::ref {

template <class Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = trans_a ? a[p * m + i] : a[i * k + p];
        const Real bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = alpha * acc + (beta == Real(0) ? Real(0) : beta * c[i * n + j]);
    }
  }
}

namespace {

template <class Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
  Real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Masked softmax row t of one group: p[j] for j <= t.
template <class Real>
void softmax_row(const Real* q, const Real* k, std::size_t t, std::size_t d, Real scale,
                 std::vector<Real>& p) {
  Real mx = -INFINITY;
  for (std::size_t j = 0; j <= t; ++j) {
    p[j] = dot(q + t * d, k + j * d, d) * scale;
    mx = std::max(mx, p[j]);
  }
  Real sum = 0;
  for (std::size_t j = 0; j <= t; ++j) {
    p[j] = std::exp(p[j] - mx);
    sum += p[j];
  }
  for (std::size_t j = 0; j <= t; ++j) p[j] /= sum;
}

}  // namespace

template <class Real>
void softmax_attention_forward(const AttentionDims& dims, std::span<const Real> q,
                               std::span<const Real> k, std::span<const Real> v,
                               std::span<Real> out) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  std::vector<Real> p(T);
  for (std::size_t g = 0; g < dims.groups(); ++g) {
    const Real* qg = q.data() + g * stride;
    const Real* kg = k.data() + g * stride;
    const Real* vg = v.data() + g * stride;
    Real* og = out.data() + g * stride;
    for (std::size_t t = 0; t < T; ++t) {
      softmax_row(qg, kg, t, d, scale, p);
      for (std::size_t c = 0; c < d; ++c) {
        Real acc = 0;
        for (std::size_t j = 0; j <= t; ++j) acc += p[j] * vg[j * d + c];
        og[t * d + c] = acc;
      }
    }
  }
}

template <class Real>
void softmax_attention_backward(const AttentionDims& dims, std::span<const Real> q,
                                std::span<const Real> k, std::span<const Real> v,
                                std::span<const Real> dout, std::span<Real> dq,
                                std::span<Real> dk, std::span<Real> dv) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  std::fill(dq.begin(), dq.end(), Real(0));
  std::fill(dk.begin(), dk.end(), Real(0));
  std::fill(dv.begin(), dv.end(), Real(0));
  std::vector<Real> p(T), dp(T);
  for (std::size_t g = 0; g < dims.groups(); ++g) {
    const std::size_t base = g * stride;
    const Real* qg = q.data() + base;
    const Real* kg = k.data() + base;
    const Real* vg = v.data() + base;
    const Real* gg = dout.data() + base;
    for (std::size_t t = 0; t < T; ++t) {
      softmax_row(qg, kg, t, d, scale, p);
      Real pdp = 0;
      for (std::size_t j = 0; j <= t; ++j) {
        dp[j] = dot(gg + t * d, vg + j * d, d);
        pdp += p[j] * dp[j];
        for (std::size_t c = 0; c < d; ++c) dv[base + j * d + c] += p[j] * gg[t * d + c];
      }
      for (std::size_t j = 0; j <= t; ++j) {
        const Real ds = p[j] * (dp[j] - pdp) * scale;
        for (std::size_t c = 0; c < d; ++c) {
          dq[base + t * d + c] += ds * kg[j * d + c];
          dk[base + j * d + c] += ds * qg[t * d + c];
        }
      }
    }
  }
}

namespace {

template <class Real>
std::vector<Real> mapped(FeatureMapKind kind, const Real* x, std::size_t T, std::size_t d,
                         Real scale) {
  const std::size_t df = feature_dim(kind, d);
  std::vector<Real> out(T * df), tmp(d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) tmp[c] = x[t * d + c] * scale;
    feature_map(kind, tmp.data(), d, out.data() + t * df);
  }
  return out;
}

}  // namespace

template <class Real>
void linear_attention_forward(const AttentionDims& dims, FeatureMapKind kind, Real eps,
                              std::span<const Real> q, std::span<const Real> k,
                              std::span<const Real> v, std::span<Real> out) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const std::size_t df = feature_dim(kind, d);
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  std::vector<Real> A(T * T);
  for (std::size_t g = 0; g < dims.groups(); ++g) {
    const auto qf = mapped(kind, q.data() + g * stride, T, d, scale);
    const auto kf = mapped(kind, k.data() + g * stride, T, d, scale);
    const Real* vg = v.data() + g * stride;
    Real* og = out.data() + g * stride;
    std::fill(A.begin(), A.end(), Real(0));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j <= t; ++j) A[t * T + j] = dot(&qf[t * df], &kf[j * df], df);
    }
    for (std::size_t t = 0; t < T; ++t) {
      Real den = eps;
      for (std::size_t j = 0; j <= t; ++j) den += A[t * T + j];
      for (std::size_t c = 0; c < d; ++c) {
        Real num = 0;
        for (std::size_t j = 0; j <= t; ++j) num += A[t * T + j] * vg[j * d + c];
        og[t * d + c] = num / den;
      }
    }
  }
}

template <class Real>
void linear_attention_backward(const AttentionDims& dims, FeatureMapKind kind, Real eps,
                               std::span<const Real> q, std::span<const Real> k,
                               std::span<const Real> v, std::span<const Real> dout,
                               std::span<Real> dq, std::span<Real> dk, std::span<Real> dv) {
  const std::size_t T = dims.seq, d = dims.head_dim, stride = T * d;
  const std::size_t df = feature_dim(kind, d);
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  std::fill(dv.begin(), dv.end(), Real(0));
  std::vector<Real> o(d), tmp(d), grad_x(d);
  for (std::size_t g = 0; g < dims.groups(); ++g) {
    const std::size_t base = g * stride;
    const auto qf = mapped(kind, q.data() + base, T, d, scale);
    const auto kf = mapped(kind, k.data() + base, T, d, scale);
    std::vector<Real> dqf(T * df, Real(0)), dkf(T * df, Real(0));
    const Real* vg = v.data() + base;
    const Real* gg = dout.data() + base;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<Real> a(t + 1);
      Real den = eps;
      for (std::size_t j = 0; j <= t; ++j) {
        a[j] = dot(&qf[t * df], &kf[j * df], df);
        den += a[j];
      }
      for (std::size_t c = 0; c < d; ++c) {
        Real num = 0;
        for (std::size_t j = 0; j <= t; ++j) num += a[j] * vg[j * d + c];
        o[c] = num / den;
      }
      const Real go = dot(gg + t * d, o.data(), d);
      for (std::size_t j = 0; j <= t; ++j) {
        const Real da = (dot(gg + t * d, vg + j * d, d) - go) / den;
        for (std::size_t c = 0; c < d; ++c) dv[base + j * d + c] += a[j] / den * gg[t * d + c];
        for (std::size_t f = 0; f < df; ++f) {
          dqf[t * df + f] += da * kf[j * df + f];
          dkf[j * df + f] += da * qf[t * df + f];
        }
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < d; ++c) tmp[c] = q[base + t * d + c] * scale;
      feature_map_backward(kind, tmp.data(), d, &dqf[t * df], grad_x.data());
      for (std::size_t c = 0; c < d; ++c) dq[base + t * d + c] = grad_x[c] * scale;
      for (std::size_t c = 0; c < d; ++c) tmp[c] = k[base + t * d + c] * scale;
      feature_map_backward(kind, tmp.data(), d, &dkf[t * df], grad_x.data());
      for (std::size_t c = 0; c < d; ++c) dk[base + t * d + c] = grad_x[c] * scale;
    }
  }
}

#define ICLBENCH_INSTANTIATE(Real)                                                              \
  template void gemm<Real>(bool, bool, std::size_t, std::size_t, std::size_t, Real, const Real*, \
                           const Real*, Real, Real*);                                           \
  template void softmax_attention_forward<Real>(const AttentionDims&, std::span<const Real>,    \
                                                std::span<const Real>, std::span<const Real>,   \
                                                std::span<Real>);                               \
  template void softmax_attention_backward<Real>(                                               \
      const AttentionDims&, std::span<const Real>, std::span<const Real>,                       \
      std::span<const Real>, std::span<const Real>, std::span<Real>, std::span<Real>,           \
      std::span<Real>);                                                                         \
  template void linear_attention_forward<Real>(const AttentionDims&, FeatureMapKind, Real,      \
                                               std::span<const Real>, std::span<const Real>,    \
                                               std::span<const Real>, std::span<Real>);         \
  template void linear_attention_backward<Real>(                                                \
      const AttentionDims&, FeatureMapKind, Real, std::span<const Real>, std::span<const Real>, \
      std::span<const Real>, std::span<const Real>, std::span<Real>, std::span<Real>,           \
      std::span<Real>);

ICLBENCH_INSTANTIATE(float)
ICLBENCH_INSTANTIATE(double)

}  // namespace iclbench::kernels::ref
