#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iclbench/rng.hpp"

namespace iclbench {

enum class CovarianceKind { Isotropic, Anisotropic };

// Input covariance for x ~ N(0, Sigma). Anisotropic carries the diagonal of
// Sigma; isotropic means Sigma = I.
struct Covariance {
  CovarianceKind kind = CovarianceKind::Isotropic;
  std::vector<double> diagonal;

  static Covariance isotropic() { return {}; }
  static Covariance anisotropic(std::vector<double> diag) {
    return {CovarianceKind::Anisotropic, std::move(diag)};
  }
  // diag(0.5, 1, 1.5, 1, 1.75), the distribution-shift benchmark for d_x = 5.
  static Covariance shifted_benchmark() {
    return anisotropic({0.5, 1.0, 1.5, 1.0, 1.75});
  }

  // Per-coordinate variances for a d_x-dimensional input.
  std::vector<double> variances(std::size_t d_x) const;
  // Throws ShapeMismatchError / NonPositiveVarianceError.
  void validate(std::size_t d_x) const;
  bool operator==(const Covariance&) const = default;
};

struct TaskWeights {
  std::vector<float> w;
  std::size_t dim() const { return w.size(); }
};

// One ICL task: k context pairs followed by a query, stored as k+1 rows.
// Labels are computed as float(sum_j double(w_j) * double(x_j)) summed in
// ascending j, so ys[i] == label_of(w, x(i)) bit for bit.
struct Prompt {
  std::size_t d_x = 0;
  std::size_t k = 0;
  std::vector<float> xs;  // (k+1) x d_x row-major, last row is the query
  std::vector<float> ys;  // k+1
  TaskWeights w;
  Covariance covariance;

  std::size_t rows() const { return k + 1; }
  std::span<const float> x(std::size_t row) const {
    return {xs.data() + row * d_x, d_x};
  }
  float y(std::size_t row) const { return ys[row]; }
  std::span<const float> query_x() const { return x(k); }
  float query_y() const { return ys[k]; }
};

struct PromptBatch {
  std::size_t d_x = 0;
  std::size_t k = 0;
  Covariance covariance;
  std::vector<Prompt> prompts;

  std::size_t size() const { return prompts.size(); }
  bool empty() const { return prompts.empty(); }
  // Non-empty with homogeneous shapes and covariance; throws ShapeMismatchError.
  void validate() const;
  PromptBatch slice(std::size_t begin, std::size_t end) const;
};

float label_of(std::span<const float> w, std::span<const float> x);

TaskWeights sample_weights(RngStream& rng, std::size_t d_x);
Prompt sample_prompt(RngStream& rng, const TaskWeights& w, std::size_t k,
                     const Covariance& cov);
// `count` prompts, each with its own w ~ N(0, I).
PromptBatch sample_batch(RngStream& rng, std::size_t count, std::size_t d_x,
                         std::size_t k, const Covariance& cov);

// Fixed evaluation bank; label selects the stream ("bank/iso", "bank/aniso").
PromptBatch make_bank(std::uint64_t seed, std::string_view label,
                      std::size_t count, std::size_t d_x, std::size_t k,
                      const Covariance& cov);

// Minimum-norm least-squares fit on the k context pairs, evaluated at the
// query. Exact (up to round-off) whenever the contexts span R^d_x.
double ols_predict(const Prompt& prompt);
std::vector<double> ols_predict(const PromptBatch& batch);

// Bank file: "ICLBANK\0", u32 version, u32 d_x, u32 k, u32 covariance kind,
// u64 count, f32 variances[d_x], then per prompt f32 w[d_x],
// xs[(k+1)*d_x], ys[k+1]. Host byte order (little-endian on supported
// targets).
void write_bank(const std::filesystem::path& path, const PromptBatch& batch);
PromptBatch read_bank(const std::filesystem::path& path);
void write_bank_csv(const std::filesystem::path& path, const PromptBatch& batch);

// Empirical per-coordinate variance of all x rows in the batch.
std::vector<double> empirical_variances(const PromptBatch& batch);

}  // namespace iclbench
