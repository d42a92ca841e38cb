#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace iclbench {

// Kernel feature map phi applied to scaled queries and keys in linear
// attention.
enum class FeatureMapKind { Identity, Relu, SquaredRelu, QuadraticPoly };

std::string_view to_string(FeatureMapKind kind);
std::optional<FeatureMapKind> parse_feature_map(std::string_view name);

// Output width of phi for a d-dimensional input. QuadraticPoly yields
// 1 + d + d(d+1)/2.
constexpr std::size_t feature_dim(FeatureMapKind kind, std::size_t d) {
  return kind == FeatureMapKind::QuadraticPoly ? 1 + d + d * (d + 1) / 2 : d;
}

// phi(x) written to out[0, feature_dim). QuadraticPoly order: constant,
// x_1..x_d, then x_i x_j for i <= j, row-major over (i, j).
template <class Real>
void feature_map(FeatureMapKind kind, const Real* x, std::size_t d, Real* out) {
  switch (kind) {
    case FeatureMapKind::Identity:
      for (std::size_t i = 0; i < d; ++i) out[i] = x[i];
      break;
    case FeatureMapKind::Relu:
      for (std::size_t i = 0; i < d; ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
      break;
    case FeatureMapKind::SquaredRelu:
      for (std::size_t i = 0; i < d; ++i) out[i] = x[i] > Real(0) ? x[i] * x[i] : Real(0);
      break;
    case FeatureMapKind::QuadraticPoly: {
      out[0] = Real(1);
      for (std::size_t i = 0; i < d; ++i) out[1 + i] = x[i];
      std::size_t o = 1 + d;
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) out[o++] = x[i] * x[j];
      }
      break;
    }
  }
}

// dx = J_phi(x)^T dphi (overwrites dx).
template <class Real>
void feature_map_backward(FeatureMapKind kind, const Real* x, std::size_t d, const Real* dphi,
                          Real* dx) {
  switch (kind) {
    case FeatureMapKind::Identity:
      for (std::size_t i = 0; i < d; ++i) dx[i] = dphi[i];
      break;
    case FeatureMapKind::Relu:
      for (std::size_t i = 0; i < d; ++i) dx[i] = x[i] > Real(0) ? dphi[i] : Real(0);
      break;
    case FeatureMapKind::SquaredRelu:
      for (std::size_t i = 0; i < d; ++i) dx[i] = x[i] > Real(0) ? Real(2) * x[i] * dphi[i] : Real(0);
      break;
    case FeatureMapKind::QuadraticPoly: {
      for (std::size_t i = 0; i < d; ++i) dx[i] = dphi[1 + i];
      std::size_t o = 1 + d;
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j, ++o) {
          if (i == j) {
            dx[i] += Real(2) * x[i] * dphi[o];
          } else {
            dx[i] += x[j] * dphi[o];
            dx[j] += x[i] * dphi[o];
          }
        }
      }
      break;
    }
  }
}

}  // namespace iclbench
