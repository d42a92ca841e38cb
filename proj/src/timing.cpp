#include "iclbench/timing.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "iclbench/errors.hpp"
#include "iclbench/kernels.hpp"
#include "iclbench/rng.hpp"

namespace iclbench {

double KernelTiming::ratio(std::size_t a, std::size_t b) const {
  const auto ia = std::find(seq.begin(), seq.end(), a);
  const auto ib = std::find(seq.begin(), seq.end(), b);
  if (ia == seq.end() || ib == seq.end()) throw std::out_of_range("ratio: T not timed");
  return median_ms[ib - seq.begin()] / median_ms[ia - seq.begin()];
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("loglog_slope needs two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

template <class F>
double median_ms(F&& run, std::size_t warmup, std::size_t reps) {
  for (std::size_t i = 0; i < warmup; ++i) run();
  std::vector<double> t;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto a = std::chrono::steady_clock::now();
    run();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::milli>(b - a).count());
  }
  std::sort(t.begin(), t.end());
  return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

}  // namespace

std::vector<KernelTiming> time_attention_kernels(const TimingOptions& options) {
  const bool ascending =
      std::adjacent_find(options.seq.begin(), options.seq.end(), std::greater_equal<>{}) == options.seq.end();
  if (options.seq.size() < 2 || !ascending || options.seq.front() == 0) {
    throw ConfigError("timing needs two or more strictly ascending positive T values");
  }
  KernelTiming quad{"quadratic", options.seq, {}, 0.0};
  KernelTiming lin{fmt::format("linear-{}", to_string(options.feature_map)), options.seq, {}, 0.0};
  for (std::size_t t : options.seq) {
    const kernels::AttentionDims dims{options.batch, options.heads, t, options.head_dim};
    RngStream rng(t, "timing");
    std::vector<float> q(dims.numel()), k(dims.numel()), v(dims.numel()), out(dims.numel());
    for (auto* buf : {&q, &k, &v}) {
      for (float& x : *buf) x = static_cast<float>(rng.normal());
    }
    if (options.quadratic) {
      std::vector<float> probs(dims.groups() * t * t);
      quad.median_ms.push_back(median_ms(
          [&] {
            kernels::omp::softmax_attention_forward<float>(dims, q, k, v, out, probs);
          },
          options.warmup, options.repetitions));
    }
    if (options.linear) {
      lin.median_ms.push_back(median_ms(
          [&] {
            kernels::omp::linear_attention_forward<float>(dims, options.feature_map, 1e-6f, q, k, v, out,
                                                          nullptr);
          },
          options.warmup, options.repetitions));
    }
  }
  std::vector<double> xs(options.seq.begin(), options.seq.end());
  std::vector<KernelTiming> result;
  if (options.quadratic) {
    quad.exponent = loglog_slope(xs, quad.median_ms);
    result.push_back(std::move(quad));
  }
  if (options.linear) {
    lin.exponent = loglog_slope(xs, lin.median_ms);
    result.push_back(std::move(lin));
  }
  return result;
}

std::string format_timings(const std::vector<KernelTiming>& timings) {
  std::string s = fmt::format("{:<24}", "T");
  if (timings.empty()) return s + "\n";
  for (std::size_t t : timings.front().seq) s += fmt::format("{:>10}", t);
  s += fmt::format("{:>10}\n", "exponent");
  for (const auto& k : timings) {
    s += fmt::format("{:<24}", k.kernel + " (ms)");
    for (double m : k.median_ms) s += fmt::format("{:>10.4f}", m);
    s += fmt::format("{:>10.3f}\n", k.exponent);
  }
  return s;
}

}  // namespace iclbench
