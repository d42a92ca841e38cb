#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iclbench/errors.hpp"
#include "iclbench/kernels.hpp"
#include "iclbench/timing.hpp"
#include "support.hpp"

using namespace iclbench;

TEST_CASE("log-log slope of exact power laws") {
  const std::vector<double> t = {64, 128, 256, 512, 1024};
  for (double p : {1.0, 2.0, 0.5}) {
    std::vector<double> y;
    for (double x : t) y.push_back(3.0 * std::pow(x, p));
    CHECK(loglog_slope(t, y) == doctest::Approx(p).epsilon(1e-12));
  }
}

TEST_CASE("timing table") {
  TimingOptions opt;
  opt.seq = {4, 8, 16};
  opt.head_dim = 4;
  opt.warmup = 1;
  opt.repetitions = 3;
  const auto timings = time_attention_kernels(opt);
  REQUIRE(timings.size() == 2);
  CHECK(timings[0].kernel == "quadratic");
  CHECK(timings[1].kernel == "linear-squared_relu");
  for (const auto& k : timings) {
    CHECK(k.seq == opt.seq);
    REQUIRE(k.median_ms.size() == 3);
    for (double ms : k.median_ms) CHECK(ms > 0.0);
    CHECK(k.ratio(8, 16) == doctest::Approx(k.median_ms[2] / k.median_ms[1]));
  }
  const auto text = format_timings(timings);
  CHECK(text.find("quadratic") != std::string::npos);
  opt.seq = {8, 4};
  CHECK_THROWS_AS(time_attention_kernels(opt), ConfigError);
}

TEST_CASE("both kernels match the single-token closed form") {
  // Softmax over one key returns its value; the linear kernel returns
  // c / (c + eps) times it, c = phi(q') . phi(k').
  RngStream rng(1, "t1");
  const kernels::AttentionDims dims{1, 1, 1, 8};
  const auto q = testing::random_tensor({8}, rng, 1.0, 1.0), k = testing::random_tensor({8}, rng, 1.0, 1.0),
             v = testing::random_tensor({8}, rng);
  std::vector<double> out(8), probs(1);
  kernels::omp::softmax_attention_forward<double>(dims, q.data(), k.data(), v.data(), out, probs);
  CHECK(probs[0] == 1.0);
  for (std::size_t i = 0; i < 8; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-15));

  const double s = 1.0 / std::sqrt(8.0);
  double c = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const double a = std::max(0.0, q[i] * s), b = std::max(0.0, k[i] * s);
    c += a * a * b * b;
  }
  kernels::omp::linear_attention_forward<double>(dims, FeatureMapKind::SquaredRelu, 1e-6, q.data(), k.data(),
                                                 v.data(), out, nullptr);
  for (std::size_t i = 0; i < 8; ++i) CHECK(out[i] == doctest::Approx(c / (c + 1e-6) * v[i]).epsilon(1e-12));
}
