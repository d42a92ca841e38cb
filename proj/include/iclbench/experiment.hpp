#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iclbench/config.hpp"
#include "iclbench/eval.hpp"

namespace iclbench {

struct Job {
  RunSpec spec;
  std::uint64_t seed = 0;
  std::filesystem::path dir;  // <out>/<run name>/seed-<seed>
};

std::vector<Job> plan_jobs(const ExperimentManifest& manifest);
std::vector<Job> plan_jobs(const ExperimentManifest& manifest, const std::vector<RunSpec>& runs);

enum class JobStatus { Done, AlreadyDone, Stopped, Diverged, Failed };
std::string to_string(JobStatus s);

struct JobOutcome {
  Job job;
  JobStatus status = JobStatus::Failed;
  std::string message;
};

struct ExecOptions {
  std::size_t jobs = 1;
  bool resume = false;
  // Leave runs unfinished after this many updates (for interruption tests).
  std::optional<std::size_t> stop_after;
  // Called from worker threads after each job, serialized by the executor.
  std::function<void(const JobOutcome&)> on_done;
};

// min(hardware threads, job count), overridden by ICLBENCH_THREADS.
std::size_t default_job_count(std::size_t requested, std::size_t job_count);

// Runs one (config, seed): writes config.ini, log.jsonl, ckpt_best.bin,
// ckpt_last.bin and, once finished, final.json. Divergence of one job does
// not abort the others.
std::vector<JobOutcome> execute_jobs(const ExperimentManifest& manifest, const std::vector<Job>& jobs,
                                     const ExecOptions& options);

std::string describe_plan(const ExperimentManifest& manifest, const std::vector<Job>& jobs);

struct SweepEntry {
  std::string value;
  std::string run_name;
  double best_test_loss = 0.0;  // mean over seeds of the best validation loss
  double final_test_loss = 0.0;
  std::size_t seeds = 0;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<SweepEntry> entries;  // sorted by best_test_loss
  std::string to_text() const;
};

SweepResult run_sweep(const ExperimentManifest& manifest, const SweepSpec& sweep,
                      const ExecOptions& options);

struct ReportFiles {
  EvalReport report;
  std::vector<std::filesystem::path> written;
};

// report.json, report.txt, curves/<name>/seed-<seed>.csv, plots/<name>.svg,
// plots/robustness-<family>.svg under out_dir.
ReportFiles write_report(const std::filesystem::path& run_root, const std::filesystem::path& out_dir,
                         CiMode mode);

}  // namespace iclbench
