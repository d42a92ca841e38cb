#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iclbench/autodiff.hpp"
#include "iclbench/checkpoint.hpp"
#include "iclbench/datagen.hpp"
#include "iclbench/model.hpp"

namespace iclbench {

enum class Precision { F32, F64 };

std::string to_string(Precision p);
Precision parse_precision(std::string_view name);

inline const std::vector<std::uint64_t> kDefaultSeeds = {42, 100, 7, 10, 2025};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  double grad_clip_max_norm = 1.0;
  std::size_t eval_every = 100;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  Precision precision = Precision::F32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // Throws ConfigError.
  void validate() const;
};

struct EvalRecord {
  std::uint64_t step = 0;
  std::uint64_t samples_seen = 0;
  // Mean training loss over the updates since the previous record; at step 0
  // the loss of the first batch under the initial parameters.
  double train_loss = 0.0;
  double test_loss = 0.0;
  double aniso_test_loss = 0.0;
  // Largest post-clip global gradient norm since the previous record.
  double grad_norm = 0.0;
  // Wall-clock per update since the previous record; exempt from determinism.
  double ms_per_step = 0.0;

  bool same_metrics(const EvalRecord& o) const {
    return step == o.step && samples_seen == o.samples_seen && train_loss == o.train_loss &&
           test_loss == o.test_loss && aniso_test_loss == o.aniso_test_loss &&
           grad_norm == o.grad_norm;
  }
};

struct RunLog {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string manifest_hash;
  std::size_t batch_size = 0;
  std::vector<EvalRecord> records;

  // Index of the minimum test loss (earliest on ties).
  std::size_t best_index() const;
  bool same_metrics(const RunLog& o) const;
};

// Held-out prompt banks shared by every run of an experiment.
struct EvalBanks {
  PromptBatch iso;
  PromptBatch aniso;
};

EvalBanks make_eval_banks(std::uint64_t seed, std::size_t count, std::size_t d_x, std::size_t k);

// Mean over batch and positions of (pred - target)^2 / d_x.
template <class Real>
ad::Var<Real> training_loss(const ad::Var<Real>& predictions, const ad::Var<Real>& targets,
                            std::size_t d_x);

// Rescales every gradient by max_norm / N when the global norm N exceeds
// max_norm. Returns N.
template <class Real>
double clip_gradients(ad::GradientSet<Real>& grads, double max_norm);

// Adam with bias correction.
template <class Real>
void adam_step(Params<Real>& params, const ad::GradientSet<Real>& grads, AdamState<Real>& state,
               const TrainConfig& config);

// Prompts for update `step` (0-based) of run `seed`. Drawn from a stream
// label disjoint from the evaluation banks.
PromptBatch training_batch(std::uint64_t seed, std::uint64_t step, std::size_t batch_size,
                           std::size_t d_x, std::size_t k);

struct TrainOptions {
  // When set, log.jsonl, ckpt_best.bin and ckpt_last.bin are written here.
  std::optional<std::filesystem::path> run_dir;
  // Continue from run_dir/ckpt_last.bin and the records in run_dir/log.jsonl.
  bool resume = false;
  // Stop (as if interrupted) once this many updates are done.
  std::optional<std::size_t> stop_after;
  std::string config_hash;
  std::string manifest_hash;
  // Prompts per inference call during evaluation.
  std::size_t eval_chunk = 32;
};

template <class Real>
struct TrainResult {
  RunLog log;
  Checkpoint<Real> best;
  Checkpoint<Real> last;
  // Per-prompt normalized query errors of the best checkpoint.
  std::vector<double> best_iso_errors;
  std::vector<double> best_aniso_errors;
  bool finished = false;
};

// Online training on fresh isotropic prompts with periodic evaluation on the
// fixed banks. Throws DivergenceError when the loss turns non-finite or stays
// above 10x the initial loss for 100 consecutive evaluations.
template <class Real>
TrainResult<Real> train(const ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                        const EvalBanks& banks, const TrainOptions& options = {});

// JSON-lines run log.
void write_log_record(std::ostream& os, const EvalRecord& r, const RunLog& run);
RunLog read_log(const std::filesystem::path& path);

}  // namespace iclbench
