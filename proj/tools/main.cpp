// iclbench command-line driver: generate | train | sweep | report | bench.
#include <fmt/format.h>
#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "iclbench/config.hpp"
#include "iclbench/datagen.hpp"
#include "iclbench/eval.hpp"
#include "iclbench/experiment.hpp"
#include "iclbench/timing.hpp"

using namespace iclbench;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kIo = 3,
  kDiverged = 4,
  kMissingRun = 5,
};

int exit_code_for(const std::vector<JobOutcome>& outcomes) {
  int code = kOk;
  for (const auto& o : outcomes) {
    if (o.status == JobStatus::Failed) return kFailure;
    if (o.status == JobStatus::Diverged) code = kDiverged;
  }
  return code;
}

void print_outcome(const JobOutcome& o) {
  fmt::print("[{}] {} seed {}: {}\n", to_string(o.status), o.job.spec.name, o.job.seed, o.message);
  std::fflush(stdout);
}

ExperimentManifest manifest_with_overrides(const std::string& path, const std::string& out,
                                           const std::string& seeds, std::optional<std::uint64_t> seed) {
  auto m = load_manifest(path);
  if (!out.empty()) m.out = out;
  std::optional<std::vector<std::uint64_t>> list;
  if (!seeds.empty()) list = parse_seed_list(seeds);
  if (seed) list = std::vector<std::uint64_t>{*seed};
  if (list) {
    m.seeds = *list;
    for (auto& r : m.runs) r.train.seeds = *list;
    for (auto& s : m.sweeps) {
      if (!s.seeds.empty()) s.seeds = *list;
    }
  }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  // Activation buffers are large and short-lived; keep freed pages in the
  // heap instead of returning them to the OS after every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Benchmark harness for in-context linear regression with softmax and linear attention"};
  app.require_subcommand(1);

  std::string manifest_path, out, seeds, ci_mode = "per-seed-mean", run_filter, sweep_name;
  std::optional<std::uint64_t> seed;
  bool resume = false, dry_run = false;
  std::size_t jobs = 0;
  std::optional<std::size_t> stop_after;

  auto* gen = app.add_subcommand("generate", "Write a prompt bank");
  std::size_t count = 10000, d_x = 5, k = 10;
  std::string covariance = "isotropic", csv_path;
  gen->add_option("--seed", seed, "Bank seed")->required();
  gen->add_option("--count", count, "Number of prompts")->capture_default_str();
  gen->add_option("--covariance", covariance, "isotropic | anisotropic")->capture_default_str();
  gen->add_option("--d-x", d_x, "Input dimension")->capture_default_str();
  gen->add_option("-k,--k", k, "Context pairs per prompt")->capture_default_str();
  gen->add_option("--out", out, "Output bank path")->required();
  gen->add_option("--csv", csv_path, "Also write a CSV dump");

  auto* tr = app.add_subcommand("train", "Train every (run, seed) of a manifest");
  tr->add_option("--manifest", manifest_path, "Experiment manifest (INI)")->required();
  tr->add_option("--out", out, "Override the output root");
  tr->add_option("--seeds", seeds, "Comma-separated seed list override");
  tr->add_option("--seed", seed, "Single seed override");
  tr->add_option("--run", run_filter, "Only the run with this name");
  tr->add_flag("--resume", resume, "Skip finished runs, continue interrupted ones");
  tr->add_flag("--dry-run", dry_run, "Print the job plan only");
  tr->add_option("--jobs", jobs, "Parallel jobs (default: min(cores, jobs); ICLBENCH_THREADS overrides)");
  tr->add_option("--stop-after", stop_after, "Interrupt every run after this many updates")
      ->group("");

  auto* sw = app.add_subcommand("sweep", "Run a one-axis sweep from a manifest");
  sw->add_option("--manifest", manifest_path, "Experiment manifest (INI)")->required();
  sw->add_option("--sweep", sweep_name, "Sweep section name (default: every sweep)");
  sw->add_option("--out", out, "Override the output root");
  sw->add_option("--seeds", seeds, "Comma-separated seed list override");
  sw->add_option("--seed", seed, "Single seed override");
  sw->add_flag("--resume", resume, "Skip finished runs");
  sw->add_flag("--dry-run", dry_run, "Print the job plan only");
  sw->add_option("--jobs", jobs, "Parallel jobs");

  auto* rep = app.add_subcommand("report", "Aggregate finished runs into tables and plots");
  std::string report_dir;
  rep->add_option("--out", out, "Run root to aggregate")->required();
  rep->add_option("--report-dir", report_dir, "Where to write (default: <out>/report)");
  rep->add_option("--ci-mode", ci_mode, "per-seed-mean | appendix-literal")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Time both attention kernels against sequence length");
  TimingOptions topt;
  std::string seq_text = "64,128,256,512,1024", kind = "both", fm = "squared_relu";
  bench->add_option("--seq", seq_text, "Ascending T values")->capture_default_str();
  bench->add_option("--d-head", topt.head_dim, "Head dimension")->capture_default_str();
  bench->add_option("--kind", kind, "quadratic | linear | both")->capture_default_str();
  bench->add_option("--feature-map", fm, "Feature map of the linear kernel")->capture_default_str();
  bench->add_option("--reps", topt.repetitions, "Timed repetitions per T")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      Covariance cov;
      if (covariance == "isotropic" || covariance == "iso") {
        cov = Covariance::isotropic();
      } else if (covariance == "anisotropic" || covariance == "aniso") {
        cov = Covariance::shifted_benchmark();
      } else {
        throw ConfigError(fmt::format("unknown covariance '{}'", covariance));
      }
      cov.validate(d_x);
      const auto bank = make_bank(*seed, "bank/cli", count, d_x, k, cov);
      write_bank(out, bank);
      if (!csv_path.empty()) write_bank_csv(csv_path, bank);
      const auto var = empirical_variances(bank);
      fmt::print("wrote {} prompts (d_x = {}, k = {}, {}) to {}\n", bank.size(), d_x, k, covariance, out);
      fmt::print("per-coordinate variance: [{:.4f}]\n", fmt::join(var, ", "));
      return kOk;
    }

    if (*tr) {
      const auto m = manifest_with_overrides(manifest_path, out, seeds, seed);
      std::vector<RunSpec> runs = m.runs;
      if (!run_filter.empty()) runs = {m.run(run_filter)};
      const auto plan = plan_jobs(m, runs);
      fmt::print("{}", describe_plan(m, plan));
      if (dry_run) return kOk;
      ExecOptions opt;
      opt.jobs = jobs;
      opt.resume = resume;
      opt.stop_after = stop_after;
      opt.on_done = print_outcome;
      return exit_code_for(execute_jobs(m, plan, opt));
    }

    if (*sw) {
      const auto m = manifest_with_overrides(manifest_path, out, seeds, seed);
      std::vector<SweepSpec> sweeps = m.sweeps;
      if (!sweep_name.empty()) sweeps = {m.sweep(sweep_name)};
      if (sweeps.empty()) throw ConfigError("manifest defines no [sweep.*] sections");
      for (const auto& s : sweeps) {
        std::vector<RunSpec> runs;
        for (const auto& v : s.values) runs.push_back(apply_sweep_value(m.run(s.base), s, v));
        ExperimentManifest scoped = m;
        scoped.out = m.out / ("sweep-" + s.name);
        fmt::print("{}", describe_plan(scoped, plan_jobs(scoped, runs)));
        if (dry_run) continue;
        ExecOptions opt;
        opt.jobs = jobs;
        opt.resume = resume;
        opt.on_done = print_outcome;
        fmt::print("{}", run_sweep(m, s, opt).to_text());
      }
      return kOk;
    }

    if (*rep) {
      const auto mode = parse_ci_mode(ci_mode);
      const std::filesystem::path dir = report_dir.empty() ? std::filesystem::path(out) / "report" : std::filesystem::path(report_dir);
      const auto files = write_report(out, dir, mode);
      fmt::print("{}", files.report.to_text());
      fmt::print("wrote {} file(s) under {}\n", files.written.size(), dir.string());
      return kOk;
    }

    if (*bench) {
      topt.seq.clear();
      for (auto t : parse_seed_list(seq_text)) topt.seq.push_back(static_cast<std::size_t>(t));
      if (kind != "both" && kind != "quadratic" && kind != "linear") {
        throw ConfigError(fmt::format("unknown kernel kind '{}'", kind));
      }
      topt.quadratic = kind != "linear";
      topt.linear = kind != "quadratic";
      const auto map = parse_feature_map(fm);
      if (!map) throw ConfigError(fmt::format("unknown feature map '{}'", fm));
      topt.feature_map = *map;
      const auto timings = time_attention_kernels(topt);
      fmt::print("{}", format_timings(timings));
      if (topt.seq.size() >= 2) {
        const auto a = topt.seq[topt.seq.size() - 2], b = topt.seq.back();
        for (const auto& t : timings) fmt::print("{} T={}/T={} time ratio {:.2f}\n", t.kernel, b, a, t.ratio(a, b));
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    fmt::print(stderr, "io error: {}\n", e.what());
    return kIo;
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "diverged: {}\n", e.what());
    return kDiverged;
  } catch (const MissingRunError& e) {
    fmt::print(stderr, "missing run: {}\n", e.what());
    return kMissingRun;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFailure;
  }
  return kOk;
}
