#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "iclbench/feature_map.hpp"

// Forward-pass wall-clock of the production attention kernels against
// sequence length.
namespace iclbench {

struct KernelTiming {
  std::string kernel;             // "quadratic" or "linear-<feature map>"
  std::vector<std::size_t> seq;   // T values
  std::vector<double> median_ms;  // per T
  double exponent = 0.0;          // least-squares slope of log time vs log T

  // median_ms at T = b divided by median_ms at T = a.
  double ratio(std::size_t a, std::size_t b) const;
};

struct TimingOptions {
  std::vector<std::size_t> seq = {64, 128, 256, 512, 1024};
  std::size_t head_dim = 64;
  std::size_t heads = 1;
  std::size_t batch = 1;
  std::size_t warmup = 5;
  std::size_t repetitions = 31;
  FeatureMapKind feature_map = FeatureMapKind::SquaredRelu;
  bool quadratic = true;
  bool linear = true;
};

std::vector<KernelTiming> time_attention_kernels(const TimingOptions& options);

// Slope of the least-squares line through (log x, log y).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string format_timings(const std::vector<KernelTiming>& timings);

}  // namespace iclbench
