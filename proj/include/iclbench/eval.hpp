#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iclbench/datagen.hpp"
#include "iclbench/model.hpp"
#include "iclbench/training.hpp"

namespace iclbench {

// Per-prompt (y_hat_query - y_query)^2 / d_x.
std::vector<double> query_errors(std::span<const double> predictions, const PromptBatch& bank);
template <class Real>
std::vector<double> query_errors(const ModelConfig& config, const Params<Real>& params,
                                 const PromptBatch& bank, std::size_t chunk = 32);
std::vector<double> ols_query_errors(const PromptBatch& bank);

double mean(std::span<const double> values);

// Mean normalized query loss over the bank.
template <class Real>
double test_loss(const ModelConfig& config, const Params<Real>& params, const PromptBatch& bank);
double ols_test_loss(const PromptBatch& bank);

struct CurvePoint {
  std::uint64_t step = 0;
  std::uint64_t samples = 0;
  double test_loss = 0.0;
};
using LossCurve = std::vector<CurvePoint>;

LossCurve test_curve(const RunLog& log);

struct ConvergencePoint {
  std::uint64_t step = 0;
  std::uint64_t samples = 0;
};

// First recorded point whose test loss is at or below
// L_init - fraction * (L_init - L_final). Throws EmptyCurveError for fewer
// than two points.
ConvergencePoint convergence_point(const LossCurve& curve, double fraction = 0.9);

enum class CiMode { PerSeedMean, AppendixLiteral };
std::string to_string(CiMode mode);
CiMode parse_ci_mode(std::string_view name);

// 1.96 x sample std (n - 1) of the per-seed mean losses.
double confidence_interval(std::span<const double> per_seed_means);
// 1.96 x population std of the per-prompt errors of all seeds concatenated.
double confidence_interval_literal(std::span<const std::vector<double>> per_seed_errors);

// 100 (aniso - iso) / iso; empty when iso < 1e-12.
std::optional<double> robustness_delta(double iso_loss, double aniso_loss);

// Contents of final.json in a run directory.
struct RunSummary {
  std::string name;
  std::uint64_t seed = 0;
  std::string attention;  // ModelConfig::attention_label()
  std::size_t layers = 0;
  std::size_t params = 0;
  std::size_t batch_size = 0;
  std::string config_hash;
  std::uint64_t best_step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double aniso_test_loss = 0.0;
  std::vector<double> iso_errors;
  std::vector<double> aniso_errors;
};

void write_summary(const std::filesystem::path& path, const RunSummary& s);
RunSummary read_summary(const std::filesystem::path& path);

struct ConfigRow {
  std::string name;
  std::string attention;
  std::size_t layers = 0;
  std::size_t params = 0;
  std::size_t batch_size = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> seed_train;
  std::vector<double> seed_test;
  std::vector<double> seed_aniso;
  std::vector<ConvergencePoint> seed_convergence;
  double train_mean = 0.0;
  std::optional<double> train_ci;  // always over per-seed means
  double test_mean = 0.0;
  std::optional<double> test_ci;
  double aniso_mean = 0.0;
  std::optional<double> aniso_ci;
  std::optional<double> degradation_pct;
  double convergence_steps = 0.0;    // mean over seeds
  double convergence_samples = 0.0;  // mean over seeds
};

struct EvalReport {
  CiMode ci_mode = CiMode::PerSeedMean;
  std::vector<ConfigRow> rows;

  const ConfigRow* find(std::string_view name) const;
  std::string to_json() const;
  // One aligned table per attention family.
  std::string to_text() const;
};

// A run directory holds final.json and log.jsonl. Runs are grouped by name;
// rows are ordered by attention label, then layers, then name.
EvalReport build_report(std::span<const std::filesystem::path> run_dirs, CiMode mode);
// Every directory under root that contains final.json, sorted.
std::vector<std::filesystem::path> find_run_dirs(const std::filesystem::path& root);

// step,samples,train,test,aniso
void write_curve_csv(const std::filesystem::path& path, const RunLog& log);

}  // namespace iclbench
