#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "iclbench/datagen.hpp"
#include "iclbench/errors.hpp"

using namespace iclbench;

namespace {

// Chi-square statistic of samples against N(0, var) over `bins`
// equiprobable bins. Bin edges come from bisection on the normal CDF.
double chi_square_normal(const std::vector<double>& xs, double var, int bins) {
  auto cdf = [&](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0 * var)); };
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b) {
    const double target = static_cast<double>(b) / bins;
    double lo = -50, hi = 50;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < target ? lo : hi) = mid;
    }
    edges.push_back(0.5 * (lo + hi));
  }
  std::vector<double> counts(bins, 0.0);
  for (double x : xs) {
    counts[std::upper_bound(edges.begin(), edges.end(), x) - edges.begin()] += 1;
  }
  const double expected = static_cast<double>(xs.size()) / bins;
  double chi = 0;
  for (double c : counts) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

// 0.999 quantile of chi-square with 19 degrees of freedom.
constexpr double kChi19 = 43.82;

Prompt manual_prompt(std::size_t d_x, const std::vector<std::vector<float>>& rows,
                     const std::vector<float>& ys) {
  Prompt p;
  p.d_x = d_x;
  p.k = rows.size() - 1;
  for (const auto& r : rows) p.xs.insert(p.xs.end(), r.begin(), r.end());
  p.ys = ys;
  p.w.w.assign(d_x, 0.0f);
  return p;
}

}  // namespace

TEST_CASE("sample_weights has standard normal moments") {
  RngStream rng(42, "weights");
  const int n = 100000;
  std::vector<double> sum(5, 0.0), sq(5, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto w = sample_weights(rng, 5);
    REQUIRE(w.dim() == 5);
    for (int j = 0; j < 5; ++j) {
      sum[j] += w.w[j];
      sq[j] += double(w.w[j]) * w.w[j];
    }
  }
  for (int j = 0; j < 5; ++j) {
    const double mean = sum[j] / n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq[j] / n - mean * mean - 1.0) < 0.05);
  }
}

TEST_CASE("sample_weights is deterministic per stream") {
  RngStream a(9, "w"), b(9, "w");
  CHECK(sample_weights(a, 5).w == sample_weights(b, 5).w);
}

TEST_CASE("anisotropic inputs match the shifted diagonal within 3 standard errors") {
  RngStream rng(3, "aniso");
  const auto cov = Covariance::shifted_benchmark();
  const std::vector<double> target = {0.5, 1.0, 1.5, 1.0, 1.75};
  const int n = 200000;
  std::vector<double> sq(5, 0.0);
  TaskWeights w{std::vector<float>(5, 1.0f)};
  int drawn = 0;
  while (drawn < n) {
    const auto p = sample_prompt(rng, w, 9, cov);  // 10 rows per prompt
    for (std::size_t i = 0; i < p.rows() && drawn < n; ++i, ++drawn) {
      for (int j = 0; j < 5; ++j) sq[j] += double(p.x(i)[j]) * p.x(i)[j];
    }
  }
  for (int j = 0; j < 5; ++j) {
    // Var of x^2 for x ~ N(0, s) is 2 s^2.
    const double se = std::sqrt(2.0 * target[j] * target[j] / n);
    CHECK(std::abs(sq[j] / n - target[j]) < 3 * se);
  }
}

TEST_CASE("zero weights give zero labels and shapes follow k") {
  RngStream rng(1, "zero");
  const auto p = sample_prompt(rng, TaskWeights{std::vector<float>(5, 0.0f)}, 10, Covariance::isotropic());
  CHECK(p.xs.size() == 11 * 5);
  CHECK(p.ys.size() == 11);
  for (float y : p.ys) CHECK(y == 0.0f);
}

TEST_CASE("labels equal the dot product exactly") {
  RngStream rng(5, "exact");
  const auto batch = sample_batch(rng, 500, 5, 10, Covariance::shifted_benchmark());
  for (const auto& p : batch.prompts) {
    for (std::size_t i = 0; i < p.rows(); ++i) REQUIRE(p.y(i) == label_of(p.w.w, p.x(i)));
  }
}

TEST_CASE("identical streams produce bitwise identical batches") {
  RngStream a(17, "batch"), b(17, "batch");
  const auto x = sample_batch(a, 64, 5, 10, Covariance::isotropic());
  const auto y = sample_batch(b, 64, 5, 10, Covariance::isotropic());
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x.prompts[i].xs == y.prompts[i].xs);
    CHECK(x.prompts[i].ys == y.prompts[i].ys);
    CHECK(x.prompts[i].w.w == y.prompts[i].w.w);
  }
}

TEST_CASE("coordinate marginals pass chi-square at 0.001 with 1e5 samples") {
  const int n = 100000;
  SUBCASE("weights") {
    RngStream rng(2025, "chi/w");
    std::vector<std::vector<double>> cols(5);
    for (int i = 0; i < n; ++i) {
      const auto w = sample_weights(rng, 5);
      for (int j = 0; j < 5; ++j) cols[j].push_back(w.w[j]);
    }
    for (int j = 0; j < 5; ++j) CHECK(chi_square_normal(cols[j], 1.0, 20) < kChi19);
  }
  SUBCASE("isotropic and anisotropic inputs") {
    for (const auto& cov : {Covariance::isotropic(), Covariance::shifted_benchmark()}) {
      RngStream rng(100, "chi/x");
      const auto bank = sample_batch(rng, n / 11 + 1, 5, 10, cov);
      const auto var = cov.variances(5);
      std::vector<std::vector<double>> cols(5);
      for (const auto& p : bank.prompts) {
        for (std::size_t i = 0; i < p.rows(); ++i) {
          for (int j = 0; j < 5; ++j) {
            if (cols[j].size() < static_cast<std::size_t>(n)) cols[j].push_back(p.x(i)[j]);
          }
        }
      }
      for (int j = 0; j < 5; ++j) {
        REQUIRE(cols[j].size() == static_cast<std::size_t>(n));
        CHECK(chi_square_normal(cols[j], var[j], 20) < kChi19);
      }
    }
  }
}

TEST_CASE("non-positive or mis-sized variances are rejected") {
  RngStream rng(1, "bad");
  TaskWeights w{std::vector<float>(5, 1.0f)};
  CHECK_THROWS_AS(sample_prompt(rng, w, 10, Covariance::anisotropic({1, 1, 0, 1, 1})),
                  NonPositiveVarianceError);
  CHECK_THROWS_AS(sample_prompt(rng, w, 10, Covariance::anisotropic({1, 1, -2, 1, 1})),
                  NonPositiveVarianceError);
  CHECK_THROWS_AS(sample_prompt(rng, w, 10, Covariance::anisotropic({1, 1})), ShapeMismatchError);
}

TEST_CASE("OLS recovers the query label on full-rank prompts") {
  RngStream rng(8, "ols");
  const auto batch = sample_batch(rng, 20, 5, 10, Covariance::isotropic());
  for (const auto& p : batch.prompts) CHECK(std::abs(ols_predict(p) - p.query_y()) < 1e-6);
}

TEST_CASE("OLS interpolates a single context pair") {
  const auto p = manual_prompt(5, {{1, 0, 0, 0, 0}, {1, 0, 0, 0, 0}}, {3, 0});
  CHECK(ols_predict(p) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("rank-deficient OLS matches the Gram-matrix pseudo-inverse") {
  // Context rows span a 3-dimensional subspace of R^5. Minimum-norm fit:
  // w = X^T (X X^T)^{-1} y, computed here by Gauss-Jordan on the 3x3 Gram.
  const std::vector<std::vector<double>> X = {{1, 2, 0, 0, 0}, {0, 1, -1, 0, 0}, {2, 0, 1, 0, 0}};
  const std::vector<double> y = {1.5, -0.5, 2.0};
  double G[3][4];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      G[i][j] = 0;
      for (int c = 0; c < 5; ++c) G[i][j] += X[i][c] * X[j][c];
    }
    G[i][3] = y[i];
  }
  for (int p = 0; p < 3; ++p) {
    for (int r = 0; r < 3; ++r) {
      if (r == p) continue;
      const double f = G[r][p] / G[p][p];
      for (int c = 0; c < 4; ++c) G[r][c] -= f * G[p][c];
    }
  }
  std::vector<double> w(5, 0.0);
  for (int i = 0; i < 3; ++i) {
    const double a = G[i][3] / G[i][i];
    for (int c = 0; c < 5; ++c) w[c] += X[i][c] * a;
  }

  SUBCASE("query orthogonal to the context span predicts 0") {
    const auto p = manual_prompt(5, {{1, 2, 0, 0, 0}, {0, 1, -1, 0, 0}, {2, 0, 1, 0, 0}, {0, 0, 0, 1, 0}},
                                 {1.5f, -0.5f, 2.0f, 0.0f});
    CHECK(std::abs(ols_predict(p)) < 1e-12);
  }
  SUBCASE("query inside the span matches the oracle") {
    const std::vector<float> q = {0.3f, -1.2f, 0.7f, 0.0f, 0.0f};
    const auto p = manual_prompt(5, {{1, 2, 0, 0, 0}, {0, 1, -1, 0, 0}, {2, 0, 1, 0, 0}, q},
                                 {1.5f, -0.5f, 2.0f, 0.0f});
    double expect = 0;
    for (int c = 0; c < 5; ++c) expect += w[c] * q[c];
    CHECK(ols_predict(p) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("OLS normalized query loss over 1000 prompts is below 1e-8") {
  const auto bank = make_bank(42, "bank/iso", 1000, 5, 10, Covariance::isotropic());
  const auto pred = ols_predict(bank);
  double loss = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double e = pred[i] - bank.prompts[i].query_y();
    loss += e * e / 5.0;
  }
  CHECK(loss / 1000 < 1e-8);
}

TEST_CASE("bank files round-trip and are byte-identical per seed") {
  const auto dir = std::filesystem::temp_directory_path() / "iclbench_test_bank";
  std::filesystem::create_directories(dir);
  const auto a = make_bank(11, "bank/cli", 50, 5, 10, Covariance::shifted_benchmark());
  write_bank(dir / "a.bin", a);
  write_bank(dir / "b.bin", make_bank(11, "bank/cli", 50, 5, 10, Covariance::shifted_benchmark()));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  // Header: magic, version, d_x, k, covariance kind, count.
  const auto bytes = slurp(dir / "a.bin");
  CHECK(bytes.substr(0, 7) == "ICLBANK");
  std::uint32_t d_x, k;
  std::uint64_t count;
  std::memcpy(&d_x, bytes.data() + 12, 4);
  std::memcpy(&k, bytes.data() + 16, 4);
  std::memcpy(&count, bytes.data() + 24, 8);
  CHECK(d_x == 5);
  CHECK(k == 10);
  CHECK(count == 50);

  const auto b = read_bank(dir / "a.bin");
  REQUIRE(b.size() == a.size());
  CHECK(b.covariance == a.covariance);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b.prompts[i].xs == a.prompts[i].xs);
    CHECK(b.prompts[i].ys == a.prompts[i].ys);
    CHECK(b.prompts[i].w.w == a.prompts[i].w.w);
  }
  write_bank_csv(dir / "a.csv", a);
  CHECK(std::filesystem::file_size(dir / "a.csv") > 0);
  CHECK_THROWS_AS(read_bank(dir / "a.csv"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("batch validation and slicing") {
  RngStream rng(1, "slice");
  auto batch = sample_batch(rng, 10, 5, 10, Covariance::isotropic());
  CHECK(batch.slice(2, 5).size() == 3);
  CHECK_THROWS(batch.slice(5, 11));
  PromptBatch empty;
  CHECK_THROWS_AS(empty.validate(), ShapeMismatchError);
  batch.prompts[3].k = 9;
  CHECK_THROWS_AS(batch.validate(), ShapeMismatchError);
}
