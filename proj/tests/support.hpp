#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "iclbench/autodiff.hpp"
#include "iclbench/rng.hpp"
#include "iclbench/tensor.hpp"

namespace testing {

using iclbench::Shape;
using iclbench::Tensor;
namespace ad = iclbench::ad;

template <class Real = double>
Tensor<Real> random_tensor(const Shape& shape, iclbench::RngStream& rng, double scale = 1.0,
                           double offset = 0.0) {
  Tensor<Real> t(shape);
  for (auto& v : t.data()) v = static_cast<Real>(offset + scale * rng.normal());
  return t;
}

// Builds a scalar from leaves on a fresh tape.
using ScalarFn = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

// Central finite differences against backward(); returns the largest
// |analytic - numeric| / max(1, |numeric|) over every input coordinate
// (or `max_coords` evenly spaced ones per input when nonzero).
inline double gradient_error(const std::vector<Tensor<double>>& inputs, const ScalarFn& fn,
                             double h = 1e-5, std::size_t max_coords = 0) {
  std::vector<Tensor<double>> analytic;
  {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
    const auto loss = fn(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) {
      const auto& g = tape.grad(l);
      analytic.push_back(g.numel() ? g : Tensor<double>(l.shape()));
    }
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> leaves;
    for (const auto& x : xs) leaves.push_back(tape.constant(x));
    return fn(tape, leaves).value().item();
  };
  double worst = 0.0;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t n = xs[i].numel();
    const std::size_t stride = max_coords && n > max_coords ? n / max_coords : 1;
    for (std::size_t c = 0; c < n; c += stride) {
      const double orig = xs[i][c];
      xs[i][c] = orig + h;
      const double up = eval(xs);
      xs[i][c] = orig - h;
      const double down = eval(xs);
      xs[i][c] = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i][c] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// sum(out * weights) with fixed random weights, so every output coordinate
// contributes a distinct sensitivity.
inline ad::Var<double> project(ad::Tape<double>& tape, const ad::Var<double>& out, std::uint64_t seed = 99) {
  iclbench::RngStream rng(seed, "projection");
  return ad::sum(ad::mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace testing
