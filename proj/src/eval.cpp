#include "iclbench/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <tuple>

namespace iclbench {

std::vector<double> query_errors(std::span<const double> predictions, const PromptBatch& bank) {
  if (predictions.size() != bank.size()) {
    throw ShapeMismatchError(fmt::format("query_errors: {} predictions for {} prompts",
                                         predictions.size(), bank.size()));
  }
  std::vector<double> err(bank.size());
  const double dx = static_cast<double>(bank.d_x);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double diff = predictions[i] - static_cast<double>(bank.prompts[i].query_y());
    err[i] = diff * diff / dx;
  }
  return err;
}

template <class Real>
std::vector<double> query_errors(const ModelConfig& config, const Params<Real>& params,
                                 const PromptBatch& bank, std::size_t chunk) {
  bank.validate();
  if (bank.d_x != config.d_x || bank.k != config.k) {
    throw ShapeMismatchError(fmt::format("bank (d_x={}, k={}) does not match model (d_x={}, k={})",
                                         bank.d_x, bank.k, config.d_x, config.k));
  }
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<double> pred;
  pred.reserve(bank.size());
  for (std::size_t b = 0; b < bank.size(); b += chunk) {
    const auto out = predict(config, params, bank.slice(b, std::min(bank.size(), b + chunk)));
    const std::size_t cols = out.dim(1);
    for (std::size_t r = 0; r < out.dim(0); ++r) {
      pred.push_back(static_cast<double>(out[r * cols + cols - 1]));
    }
  }
  return query_errors(pred, bank);
}

std::vector<double> ols_query_errors(const PromptBatch& bank) {
  return query_errors(ols_predict(bank), bank);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

template <class Real>
double test_loss(const ModelConfig& config, const Params<Real>& params, const PromptBatch& bank) {
  return mean(query_errors(config, params, bank));
}

double ols_test_loss(const PromptBatch& bank) { return mean(ols_query_errors(bank)); }

LossCurve test_curve(const RunLog& log) {
  LossCurve c;
  for (const auto& r : log.records) c.push_back({r.step, r.samples_seen, r.test_loss});
  return c;
}

ConvergencePoint convergence_point(const LossCurve& curve, double fraction) {
  if (curve.size() < 2) throw EmptyCurveError("convergence_point needs at least two points");
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].step <= curve[i - 1].step) {
      throw EmptyCurveError("convergence_point: steps are not strictly increasing");
    }
  }
  const double init = curve.front().test_loss;
  const double fin = curve.back().test_loss;
  const double threshold = init - fraction * (init - fin);
  // A loss recorded exactly at the threshold counts as crossing it, despite
  // round-off in the threshold arithmetic.
  const double slack = 1e-12 * std::max({1.0, std::abs(init), std::abs(fin)});
  for (const auto& p : curve) {
    if (p.test_loss <= threshold + slack) return {p.step, p.samples};
  }
  return {curve.back().step, curve.back().samples};
}

std::string to_string(CiMode mode) {
  return mode == CiMode::PerSeedMean ? "per-seed-mean" : "appendix-literal";
}

CiMode parse_ci_mode(std::string_view name) {
  if (name == "per-seed-mean") return CiMode::PerSeedMean;
  if (name == "appendix-literal") return CiMode::AppendixLiteral;
  throw ConfigError(fmt::format("unknown CI mode '{}' (per-seed-mean or appendix-literal)", name));
}

namespace {

// Sum of squared deviations from the mean, shifted by the first value so
// identical inputs give exactly zero.
double sum_sq_dev(std::span<const double> xs) {
  const double x0 = xs.front();
  double s = 0.0, s2 = 0.0;
  for (double v : xs) {
    s += v - x0;
    s2 += (v - x0) * (v - x0);
  }
  return std::max(0.0, s2 - s * s / static_cast<double>(xs.size()));
}

}  // namespace

double confidence_interval(std::span<const double> per_seed_means) {
  if (per_seed_means.size() < 2) {
    throw InsufficientSeedsError(
        fmt::format("confidence interval needs at least 2 seeds, got {}", per_seed_means.size()));
  }
  return 1.96 * std::sqrt(sum_sq_dev(per_seed_means) / static_cast<double>(per_seed_means.size() - 1));
}

double confidence_interval_literal(std::span<const std::vector<double>> per_seed_errors) {
  if (per_seed_errors.size() < 2) {
    throw InsufficientSeedsError(
        fmt::format("confidence interval needs at least 2 seeds, got {}", per_seed_errors.size()));
  }
  std::vector<double> all;
  for (const auto& e : per_seed_errors) all.insert(all.end(), e.begin(), e.end());
  if (all.empty()) throw EmptyCurveError("no per-prompt errors to aggregate");
  return 1.96 * std::sqrt(sum_sq_dev(all) / static_cast<double>(all.size()));
}

std::optional<double> robustness_delta(double iso_loss, double aniso_loss) {
  if (iso_loss < 1e-12) return std::nullopt;
  return 100.0 * (aniso_loss - iso_loss) / iso_loss;
}

void write_summary(const std::filesystem::path& path, const RunSummary& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["attention"] = s.attention;
  j["layers"] = s.layers;
  j["params"] = s.params;
  j["batch_size"] = s.batch_size;
  j["config_hash"] = s.config_hash;
  j["best_step"] = s.best_step;
  j["train_loss"] = s.train_loss;
  j["test_loss"] = s.test_loss;
  j["aniso_test_loss"] = s.aniso_test_loss;
  j["iso_errors"] = s.iso_errors;
  j["aniso_errors"] = s.aniso_errors;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os << j.dump() << '\n';
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

RunSummary read_summary(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingRunError(fmt::format("cannot open {}", path.string()));
  try {
    const auto j = nlohmann::json::parse(is);
    RunSummary s;
    s.name = j.at("name").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.attention = j.at("attention").get<std::string>();
    s.layers = j.at("layers").get<std::size_t>();
    s.params = j.at("params").get<std::size_t>();
    s.batch_size = j.at("batch_size").get<std::size_t>();
    s.config_hash = j.at("config_hash").get<std::string>();
    s.best_step = j.at("best_step").get<std::uint64_t>();
    s.train_loss = j.at("train_loss").get<double>();
    s.test_loss = j.at("test_loss").get<double>();
    s.aniso_test_loss = j.at("aniso_test_loss").get<double>();
    s.iso_errors = j.at("iso_errors").get<std::vector<double>>();
    s.aniso_errors = j.at("aniso_errors").get<std::vector<double>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

const ConfigRow* EvalReport::find(std::string_view name) const {
  for (const auto& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::string format_ci(double mean, const std::optional<double>& ci) {
  return ci ? fmt::format("{:.4f} ± {:.4f}", mean, *ci) : fmt::format("{:.4f} ± n/a", mean);
}

std::string format_params(std::size_t n) {
  if (n >= 1000000) return fmt::format("{:.2f} M", static_cast<double>(n) / 1e6);
  return fmt::format("{:.1f} K", static_cast<double>(n) / 1e3);
}

std::string group_digits(double v) {
  auto s = fmt::format("{:.0f}", v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

// UTF-8 aware width for column alignment.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string render_table(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) line += "  ";
      line += cells[r][c];
      if (c + 1 < cells[r].size()) line.append(width[c] - display_width(cells[r][c]), ' ');
    }
    out += line + '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
    }
  }
  return out;
}

std::string family_of(const std::string& attention) {
  return attention == "quadratic" ? "quadratic" : "linear";
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["ci_mode"] = to_string(ci_mode);
  auto rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["name"] = r.name;
    o["attention"] = r.attention;
    o["layers"] = r.layers;
    o["params"] = r.params;
    o["batch_size"] = r.batch_size;
    o["seeds"] = r.seeds;
    o["train_loss"] = r.train_mean;
    o["train_ci"] = optional_json(r.train_ci);
    o["test_loss"] = r.test_mean;
    o["test_ci"] = optional_json(r.test_ci);
    o["aniso_test_loss"] = r.aniso_mean;
    o["aniso_ci"] = optional_json(r.aniso_ci);
    o["degradation_pct"] = optional_json(r.degradation_pct);
    o["convergence_steps"] = r.convergence_steps;
    o["convergence_samples"] = r.convergence_samples;
    o["seed_train_loss"] = r.seed_train;
    o["seed_test_loss"] = r.seed_test;
    o["seed_aniso_test_loss"] = r.seed_aniso;
    auto conv = nlohmann::ordered_json::array();
    for (const auto& c : r.seed_convergence) conv.push_back({c.step, c.samples});
    o["seed_convergence"] = conv;
    rows_json.push_back(o);
  }
  j["rows"] = rows_json;
  return j.dump(2) + '\n';
}

std::string EvalReport::to_text() const {
  std::string out;
  for (const char* family : {"quadratic", "linear"}) {
    std::vector<std::vector<std::string>> cells = {
        {"Config", "Attention", "Params", "Train Loss", "Test Loss", "Anisotropic Test Loss",
         "Degradation", "Batch", "Steps to 90%", "Samples to 90%", "Seeds"}};
    for (const auto& r : rows) {
      if (family_of(r.attention) != family) continue;
      cells.push_back({r.name, r.attention, format_params(r.params), format_ci(r.train_mean, r.train_ci),
                       format_ci(r.test_mean, r.test_ci), format_ci(r.aniso_mean, r.aniso_ci),
                       r.degradation_pct ? fmt::format("{:+.1f}%", *r.degradation_pct) : "n/a",
                       std::to_string(r.batch_size), group_digits(r.convergence_steps),
                       group_digits(r.convergence_samples), std::to_string(r.seeds.size())});
    }
    if (cells.size() == 1) continue;
    if (!out.empty()) out += '\n';
    out += fmt::format("{} attention (CI: {})\n", family, to_string(ci_mode));
    out += render_table(cells);
  }
  return out;
}

EvalReport build_report(std::span<const std::filesystem::path> run_dirs, CiMode mode) {
  if (run_dirs.empty()) throw MissingRunError("no run directories to report on");
  struct Run {
    RunSummary summary;
    RunLog log;
  };
  std::map<std::string, std::vector<Run>> groups;
  for (const auto& dir : run_dirs) {
    if (!std::filesystem::exists(dir / "final.json")) {
      throw MissingRunError(fmt::format("{} has no final.json (run incomplete?)", dir.string()));
    }
    Run run{read_summary(dir / "final.json"), read_log(dir / "log.jsonl")};
    groups[run.summary.name].push_back(std::move(run));
  }

  EvalReport report;
  report.ci_mode = mode;
  for (auto& [name, runs] : groups) {
    std::sort(runs.begin(), runs.end(),
              [](const Run& a, const Run& b) { return a.summary.seed < b.summary.seed; });
    ConfigRow row;
    row.name = name;
    const auto& first = runs.front().summary;
    row.attention = first.attention;
    row.layers = first.layers;
    row.params = first.params;
    row.batch_size = first.batch_size;
    std::vector<std::vector<double>> iso_err, aniso_err;
    for (const auto& run : runs) {
      const auto& s = run.summary;
      if (s.attention != row.attention || s.layers != row.layers || s.batch_size != row.batch_size) {
        throw ConfigError(fmt::format("runs named '{}' disagree on their configuration", name));
      }
      row.seeds.push_back(s.seed);
      row.seed_train.push_back(s.train_loss);
      row.seed_test.push_back(s.test_loss);
      row.seed_aniso.push_back(s.aniso_test_loss);
      row.seed_convergence.push_back(convergence_point(test_curve(run.log)));
      iso_err.push_back(s.iso_errors);
      aniso_err.push_back(s.aniso_errors);
    }
    row.train_mean = mean(row.seed_train);
    row.test_mean = mean(row.seed_test);
    row.aniso_mean = mean(row.seed_aniso);
    if (runs.size() >= 2) {
      row.train_ci = confidence_interval(row.seed_train);
      if (mode == CiMode::PerSeedMean) {
        row.test_ci = confidence_interval(row.seed_test);
        row.aniso_ci = confidence_interval(row.seed_aniso);
      } else {
        row.test_ci = confidence_interval_literal(iso_err);
        row.aniso_ci = confidence_interval_literal(aniso_err);
      }
    }
    row.degradation_pct = robustness_delta(row.test_mean, row.aniso_mean);
    double steps = 0.0, samples = 0.0;
    for (const auto& c : row.seed_convergence) {
      steps += static_cast<double>(c.step);
      samples += static_cast<double>(c.samples);
    }
    row.convergence_steps = steps / static_cast<double>(runs.size());
    row.convergence_samples = samples / static_cast<double>(runs.size());
    report.rows.push_back(std::move(row));
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const ConfigRow& a, const ConfigRow& b) {
    return std::tie(a.attention, a.layers, a.name) < std::tie(b.attention, b.layers, b.name);
  });
  return report;
}

std::vector<std::filesystem::path> find_run_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    throw MissingRunError(fmt::format("{} is not a directory", root.string()));
  }
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == "final.json") {
      dirs.push_back(e.path().parent_path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

void write_curve_csv(const std::filesystem::path& path, const RunLog& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os << "step,samples,train,test,aniso\n";
  for (const auto& r : log.records) {
    os << fmt::format("{},{},{},{},{}\n", r.step, r.samples_seen, r.train_loss, r.test_loss,
                      r.aniso_test_loss);
  }
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

template std::vector<double> query_errors(const ModelConfig&, const Params<float>&,
                                          const PromptBatch&, std::size_t);
template std::vector<double> query_errors(const ModelConfig&, const Params<double>&,
                                          const PromptBatch&, std::size_t);
template double test_loss(const ModelConfig&, const Params<float>&, const PromptBatch&);
template double test_loss(const ModelConfig&, const Params<double>&, const PromptBatch&);

}  // namespace iclbench
