#include "iclbench/experiment.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "iclbench/plot.hpp"

namespace iclbench {

std::vector<Job> plan_jobs(const ExperimentManifest& manifest, const std::vector<RunSpec>& runs) {
  std::vector<Job> jobs;
  for (const auto& run : runs) {
    for (std::uint64_t seed : run.train.seeds) {
      jobs.push_back({run, seed, manifest.out / run.name / fmt::format("seed-{}", seed)});
    }
  }
  return jobs;
}

std::vector<Job> plan_jobs(const ExperimentManifest& manifest) {
  return plan_jobs(manifest, manifest.runs);
}

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Done: return "done";
    case JobStatus::AlreadyDone: return "already done";
    case JobStatus::Stopped: return "stopped";
    case JobStatus::Diverged: return "diverged";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

std::size_t default_job_count(std::size_t requested, std::size_t job_count) {
  if (const char* env = std::getenv("ICLBENCH_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) requested = static_cast<std::size_t>(v);
  }
  if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(requested, std::max<std::size_t>(job_count, 1)));
}

std::string describe_plan(const ExperimentManifest& manifest, const std::vector<Job>& jobs) {
  std::string s = fmt::format("manifest {}  bank_seed {}  bank_size {}  {} job(s)\n", manifest.hash,
                              manifest.bank_seed, manifest.bank_size, jobs.size());
  for (const auto& j : jobs) {
    const auto& m = j.spec.model;
    const auto& t = j.spec.train;
    s += fmt::format("  {:<28} seed {:<6} {:<22} layers {} d_model {} lr {} batch {} steps {} -> {}\n",
                     j.spec.name, j.seed, m.attention_label(), m.layers, m.d_model, t.learning_rate,
                     t.batch_size, t.steps, j.dir.string());
  }
  return s;
}

namespace {

template <class Real>
void run_job(const ExperimentManifest& manifest, const Job& job, const EvalBanks& banks,
             const ExecOptions& options, JobOutcome& outcome) {
  const auto hash = config_hash(job.spec, manifest);
  TrainOptions topt;
  topt.run_dir = job.dir;
  topt.resume = options.resume;
  topt.stop_after = options.stop_after;
  topt.config_hash = hash;
  topt.manifest_hash = manifest.hash;
  topt.eval_chunk = manifest.eval_chunk;
  auto result = train<Real>(job.spec.model, job.spec.train, job.seed, banks, topt);
  if (!result.finished) {
    outcome.status = JobStatus::Stopped;
    outcome.message = fmt::format("stopped at step {}", result.last.step);
    return;
  }
  const auto& best = result.log.records[result.log.best_index()];
  RunSummary s;
  s.name = job.spec.name;
  s.seed = job.seed;
  s.attention = job.spec.model.attention_label();
  s.layers = job.spec.model.layers;
  s.params = count_params(job.spec.model);
  s.batch_size = job.spec.train.batch_size;
  s.config_hash = hash;
  s.best_step = best.step;
  s.train_loss = best.train_loss;
  s.test_loss = best.test_loss;
  s.aniso_test_loss = best.aniso_test_loss;
  s.iso_errors = std::move(result.best_iso_errors);
  s.aniso_errors = std::move(result.best_aniso_errors);
  write_summary(job.dir / "final.json", s);
  outcome.status = JobStatus::Done;
  outcome.message = fmt::format("best step {} test {:.4f} aniso {:.4f}", best.step, best.test_loss,
                                best.aniso_test_loss);
}

bool completed(const Job& job, const std::string& hash) {
  const auto path = job.dir / "final.json";
  if (!std::filesystem::exists(path)) return false;
  try {
    return read_summary(path).config_hash == hash;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

std::vector<JobOutcome> execute_jobs(const ExperimentManifest& manifest, const std::vector<Job>& jobs,
                                     const ExecOptions& options) {
  // Banks depend only on (d_x, k); build each once and share read-only.
  std::map<std::pair<std::size_t, std::size_t>, EvalBanks> banks;
  for (const auto& j : jobs) {
    const auto key = std::make_pair(j.spec.model.d_x, j.spec.model.k);
    if (!banks.contains(key)) {
      banks.emplace(key, make_eval_banks(manifest.bank_seed, manifest.bank_size, key.first, key.second));
    }
  }

  std::vector<JobOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  const std::size_t workers = default_job_count(options.jobs, jobs.size());

  auto worker = [&] {
    if (workers > 1) omp_set_num_threads(1);
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      JobOutcome& out = outcomes[i];
      out.job = job;
      try {
        std::filesystem::create_directories(job.dir);
        const auto hash = config_hash(job.spec, manifest);
        if (options.resume && completed(job, hash)) {
          out.status = JobStatus::AlreadyDone;
        } else {
          {
            std::ofstream os(job.dir / "config.ini", std::ios::trunc);
            os << run_config_text(job.spec, manifest);
            if (!os) throw IoError(fmt::format("cannot write {}", (job.dir / "config.ini").string()));
          }
          const auto& b = banks.at({job.spec.model.d_x, job.spec.model.k});
          if (job.spec.train.precision == Precision::F64) {
            run_job<double>(manifest, job, b, options, out);
          } else {
            run_job<float>(manifest, job, b, options, out);
          }
        }
      } catch (const DivergenceError& e) {
        out.status = JobStatus::Diverged;
        out.message = e.what();
      } catch (const std::exception& e) {
        out.status = JobStatus::Failed;
        out.message = e.what();
      }
      if (options.on_done) {
        std::lock_guard lock(mu);
        options.on_done(out);
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

std::string SweepResult::to_text() const {
  std::string s = fmt::format("sweep {} over {} (base {})\n", spec.name, to_string(spec.axis), spec.base);
  s += fmt::format("{:<4} {:<16} {:>14} {:>14} {:>6}\n", "rank", "value", "best test", "final test", "seeds");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    s += fmt::format("{:<4} {:<16} {:>14.6f} {:>14.6f} {:>6}\n", i + 1, e.value, e.best_test_loss,
                     e.final_test_loss, e.seeds);
  }
  if (!entries.empty()) s += fmt::format("winner: {} = {}\n", to_string(spec.axis), entries.front().value);
  return s;
}

SweepResult run_sweep(const ExperimentManifest& manifest, const SweepSpec& sweep,
                      const ExecOptions& options) {
  const RunSpec& base = manifest.run(sweep.base);
  std::vector<RunSpec> runs;
  for (const auto& v : sweep.values) runs.push_back(apply_sweep_value(base, sweep, v));
  ExperimentManifest scoped = manifest;
  scoped.out = manifest.out / ("sweep-" + sweep.name);
  const auto jobs = plan_jobs(scoped, runs);
  const auto outcomes = execute_jobs(scoped, jobs, options);

  SweepResult result;
  result.spec = sweep;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    SweepEntry e;
    e.value = sweep.values[r];
    e.run_name = runs[r].name;
    for (const auto& o : outcomes) {
      if (o.job.spec.name != runs[r].name) continue;
      if (o.status != JobStatus::Done && o.status != JobStatus::AlreadyDone) {
        throw Error(fmt::format("sweep job {} seed {} {}: {}", o.job.spec.name, o.job.seed,
                                to_string(o.status), o.message));
      }
      const RunLog log = read_log(o.job.dir / "log.jsonl");
      e.best_test_loss += log.records[log.best_index()].test_loss;
      e.final_test_loss += log.records.back().test_loss;
      ++e.seeds;
    }
    e.best_test_loss /= static_cast<double>(std::max<std::size_t>(e.seeds, 1));
    e.final_test_loss /= static_cast<double>(std::max<std::size_t>(e.seeds, 1));
    result.entries.push_back(e);
  }
  std::stable_sort(result.entries.begin(), result.entries.end(),
                   [](const SweepEntry& a, const SweepEntry& b) { return a.best_test_loss < b.best_test_loss; });
  return result;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text,
                std::vector<std::filesystem::path>& written) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os << text;
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
  written.push_back(path);
}

std::string file_stem(const std::string& name) {
  std::string s = name;
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  }
  return s;
}

}  // namespace

ReportFiles write_report(const std::filesystem::path& run_root, const std::filesystem::path& out_dir,
                         CiMode mode) {
  const auto dirs = find_run_dirs(run_root);
  if (dirs.empty()) throw MissingRunError(fmt::format("no finished runs under {}", run_root.string()));
  ReportFiles files;
  files.report = build_report(dirs, mode);
  write_text(out_dir / "report.json", files.report.to_json(), files.written);
  write_text(out_dir / "report.txt", files.report.to_text(), files.written);

  std::map<std::string, std::vector<std::pair<std::uint64_t, std::filesystem::path>>> by_name;
  for (const auto& d : dirs) {
    const auto s = read_summary(d / "final.json");
    by_name[s.name].emplace_back(s.seed, d);
  }
  for (auto& [name, runs] : by_name) {
    std::sort(runs.begin(), runs.end());
    std::vector<RunLog> logs;
    std::vector<std::string> provenance = {fmt::format("config {}", name)};
    for (const auto& [seed, dir] : runs) {
      logs.push_back(read_log(dir / "log.jsonl"));
      const auto csv = out_dir / "curves" / file_stem(name) / fmt::format("seed-{}.csv", seed);
      std::filesystem::create_directories(csv.parent_path());
      write_curve_csv(csv, logs.back());
      files.written.push_back(csv);
      provenance.push_back(fmt::format("seed {} config_hash {} log {}", seed, logs.back().config_hash,
                                       std::filesystem::relative(dir / "log.jsonl", run_root).string()));
    }
    write_text(out_dir / "plots" / (file_stem(name) + ".svg"),
               loss_curve_svg(fmt::format("{}: train / test loss", name), logs, provenance), files.written);
  }
  for (const char* family : {"quadratic", "linear"}) {
    std::vector<ConfigRow> rows;
    for (const auto& r : files.report.rows) {
      if ((r.attention == "quadratic") == (std::string(family) == "quadratic")) rows.push_back(r);
    }
    if (rows.empty()) continue;
    std::vector<std::string> provenance = {fmt::format("ci_mode {}", to_string(mode))};
    for (const auto& r : rows) {
      provenance.push_back(fmt::format("{}: iso {} aniso {} seeds {}", r.name, r.test_mean, r.aniso_mean,
                                       r.seeds.size()));
    }
    write_text(out_dir / "plots" / fmt::format("robustness-{}.svg", family),
               robustness_bars_svg(fmt::format("{} attention: isotropic vs anisotropic", family), rows,
                                   provenance),
               files.written);
  }
  return files;
}

}  // namespace iclbench
