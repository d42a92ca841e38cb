#include "iclbench/training.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "iclbench/eval.hpp"

namespace iclbench {

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::F32;
  if (name == "f64") return Precision::F64;
  throw ConfigError(fmt::format("unknown precision '{}' (expected f32 or f64)", name));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(grad_clip_max_norm > 0)) throw ConfigError("grad_clip_max_norm must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (steps == 0) throw ConfigError("steps must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
}

std::size_t RunLog::best_index() const {
  if (records.empty()) throw EmptyCurveError("run log has no records");
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].test_loss < records[best].test_loss) best = i;
  }
  return best;
}

bool RunLog::same_metrics(const RunLog& o) const {
  if (seed != o.seed || config_hash != o.config_hash || records.size() != o.records.size()) {
    return false;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].same_metrics(o.records[i])) return false;
  }
  return true;
}

EvalBanks make_eval_banks(std::uint64_t seed, std::size_t count, std::size_t d_x, std::size_t k) {
  EvalBanks b;
  b.iso = make_bank(seed, "bank/iso", count, d_x, k, Covariance::isotropic());
  b.aniso = make_bank(seed, "bank/aniso", count, d_x, k, Covariance::shifted_benchmark());
  return b;
}

PromptBatch training_batch(std::uint64_t seed, std::uint64_t step, std::size_t batch_size,
                           std::size_t d_x, std::size_t k) {
  RngStream rng = RngStream(seed, "train").child("batch", step);
  return sample_batch(rng, batch_size, d_x, k, Covariance::isotropic());
}

template <class Real>
ad::Var<Real> training_loss(const ad::Var<Real>& predictions, const ad::Var<Real>& targets,
                            std::size_t d_x) {
  if (predictions.shape() != targets.shape()) {
    throw ShapeMismatchError(fmt::format("training_loss: predictions {} vs targets {}",
                                         shape_str(predictions.shape()),
                                         shape_str(targets.shape())));
  }
  return ad::scale(ad::mean(ad::square(ad::sub(predictions, targets))),
                   Real(1) / static_cast<Real>(d_x));
}

template <class Real>
double clip_gradients(ad::GradientSet<Real>& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (norm > max_norm) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (auto& g : grads.grads) {
      for (Real& v : g.data()) v *= factor;
    }
  }
  return norm;
}

template <class Real>
void adam_step(Params<Real>& params, const ad::GradientSet<Real>& grads, AdamState<Real>& state,
               const TrainConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeMismatchError("adam_step: gradient / state count does not match parameters");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const Real b1 = static_cast<Real>(config.beta1);
  const Real b2 = static_cast<Real>(config.beta2);
  const Real c1 = static_cast<Real>(1.0 / (1.0 - std::pow(config.beta1, t)));
  const Real c2 = static_cast<Real>(1.0 / (1.0 - std::pow(config.beta2, t)));
  const Real lr = static_cast<Real>(config.learning_rate);
  const Real eps = static_cast<Real>(config.adam_eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Real* w = params.tensors[p].ptr();
    Real* m = state.m[p].ptr();
    Real* v = state.v[p].ptr();
    const auto& g = grads.grads[p];
    if (g.numel() != params.tensors[p].numel()) {
      throw ShapeMismatchError("adam_step: gradient shape mismatch for " + params.names[p]);
    }
    const Real* gp = g.ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * gp[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * gp[i] * gp[i];
      w[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
}

void write_log_record(std::ostream& os, const EvalRecord& r, const RunLog& run) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["samples_seen"] = r.samples_seen;
  j["train_loss"] = r.train_loss;
  j["test_loss"] = r.test_loss;
  j["aniso_test_loss"] = r.aniso_test_loss;
  j["grad_norm"] = r.grad_norm;
  j["ms_per_step"] = r.ms_per_step;
  j["seed"] = run.seed;
  j["config_hash"] = run.config_hash;
  j["manifest_hash"] = run.manifest_hash;
  os << j.dump() << '\n';
}

RunLog read_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open {}", path.string()));
  RunLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalRecord r;
      r.step = j.at("step").get<std::uint64_t>();
      r.samples_seen = j.at("samples_seen").get<std::uint64_t>();
      r.train_loss = j.at("train_loss").get<double>();
      r.test_loss = j.at("test_loss").get<double>();
      r.aniso_test_loss = j.at("aniso_test_loss").get<double>();
      r.grad_norm = j.at("grad_norm").get<double>();
      r.ms_per_step = j.value("ms_per_step", 0.0);
      log.seed = j.at("seed").get<std::uint64_t>();
      log.config_hash = j.at("config_hash").get<std::string>();
      log.manifest_hash = j.value("manifest_hash", std::string());
      if (!log.records.empty() && r.step <= log.records.back().step) {
        throw IoError("steps are not strictly increasing");
      }
      log.records.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    } catch (const IoError& e) {
      throw IoError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  if (log.records.size() >= 2 && log.records[1].step > 0) {
    log.batch_size = log.records[1].samples_seen / log.records[1].step;
  }
  return log;
}

namespace {

constexpr double kDivergenceFactor = 10.0;
constexpr std::size_t kDivergencePatience = 100;

void rewrite_log(const std::filesystem::path& path, const RunLog& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  for (const auto& r : log.records) write_log_record(os, r, log);
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

}  // namespace

template <class Real>
TrainResult<Real> train(const ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                        const EvalBanks& banks, const TrainOptions& options) {
  model.validate();
  config.validate();
  using Clock = std::chrono::steady_clock;

  TrainResult<Real> result;
  RunLog& log = result.log;
  log.seed = seed;
  log.config_hash = options.config_hash;
  log.manifest_hash = options.manifest_hash;
  log.batch_size = config.batch_size;

  Checkpoint<Real> state;
  std::size_t start = 0;
  const auto dir = options.run_dir;
  std::filesystem::path log_path, best_path, last_path;
  if (dir) {
    std::filesystem::create_directories(*dir);
    log_path = *dir / "log.jsonl";
    best_path = *dir / "ckpt_best.bin";
    last_path = *dir / "ckpt_last.bin";
  }

  if (options.resume && dir && std::filesystem::exists(last_path)) {
    state = load_checkpoint<Real>(last_path);
    RunLog prior = read_log(log_path);
    if (prior.config_hash != options.config_hash) {
      throw ConfigError(fmt::format("{} was produced by a different configuration", dir->string()));
    }
    for (const auto& r : prior.records) {
      if (r.step <= state.step) log.records.push_back(r);
    }
    if (log.records.empty() || log.records.back().step != state.step) {
      throw IoError(fmt::format("{}: log does not reach checkpoint step {}", dir->string(),
                                state.step));
    }
    start = state.step;
    result.best = load_checkpoint<Real>(best_path);
  } else {
    RngStream init_rng(seed, "init");
    state.params = init_params<Real>(model, init_rng);
    state.adam = AdamState<Real>::zeros_like(state.params);
  }

  auto evaluate = [&](EvalRecord& r, const Params<Real>& params, std::vector<double>* iso_err,
                      std::vector<double>* aniso_err) {
    std::vector<double> iso, aniso;
    try {
      iso = query_errors(model, params, banks.iso, options.eval_chunk);
      aniso = query_errors(model, params, banks.aniso, options.eval_chunk);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(fmt::format("seed {}: non-finite evaluation: {}", seed, e.what()));
    }
    r.test_loss = mean(iso);
    r.aniso_test_loss = mean(aniso);
    if (iso_err) *iso_err = std::move(iso);
    if (aniso_err) *aniso_err = std::move(aniso);
  };

  auto persist = [&](const EvalRecord& r) {
    if (!dir) return;
    std::ofstream os(log_path, std::ios::app);
    if (!os) throw IoError(fmt::format("cannot append to {}", log_path.string()));
    write_log_record(os, r, log);
  };

  if (start > 0) {
    // Errors of the restored best checkpoint; identical to the original run's.
    evaluate(log.records[log.best_index()], result.best.params, &result.best_iso_errors,
             &result.best_aniso_errors);
    if (dir) rewrite_log(log_path, log);
  } else if (dir) {
    std::ofstream(log_path, std::ios::trunc);
  }

  double window_loss = 0.0;
  std::size_t window_steps = 0;
  double window_grad = 0.0;
  auto window_start = Clock::now();
  std::size_t over_count = 0;
  if (!log.records.empty()) {
    const double init = log.records.front().train_loss;
    for (const auto& r : log.records) {
      over_count = r.train_loss > kDivergenceFactor * init ? over_count + 1 : 0;
    }
  }

  for (std::size_t step = start; step < config.steps; ++step) {
    const PromptBatch batch = training_batch(seed, step, config.batch_size, model.d_x, model.k);
    double loss_value = 0.0;
    ad::GradientSet<Real> grads;
    try {
      ad::Tape<Real> tape;
      const auto vars = bind_params(tape, state.params, true);
      const auto tokens = embed_tokens(model, vars, tape.constant(raw_tokens<Real>(batch)));
      const auto pred = forward(model, vars, tokens);
      const auto loss = training_loss(pred, tape.constant(prompt_targets<Real>(batch)), model.d_x);
      loss_value = static_cast<double>(loss.value().item());
      grads = tape.backward(loss);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(fmt::format("seed {}: non-finite value at step {}: {}", seed, step,
                                        e.what()));
    }

    if (step == 0) {
      EvalRecord r;
      r.train_loss = loss_value;
      evaluate(r, state.params, &result.best_iso_errors, &result.best_aniso_errors);
      log.records.push_back(r);
      persist(r);
      result.best = state;
      if (dir) {
        save_checkpoint(best_path, result.best);
        save_checkpoint(last_path, state);
      }
      window_start = Clock::now();
    }

    const double norm = clip_gradients(grads, config.grad_clip_max_norm);
    if (!std::isfinite(norm)) {
      throw DivergenceError(fmt::format("seed {}: non-finite gradient norm at step {}", seed, step));
    }
    window_grad = std::max(window_grad, std::min(norm, config.grad_clip_max_norm));
    adam_step(state.params, grads, state.adam, config);
    state.step = step + 1;
    window_loss += loss_value;
    ++window_steps;

    const bool boundary = state.step % config.eval_every == 0 || state.step == config.steps;
    if (boundary) {
      EvalRecord r;
      r.step = state.step;
      r.samples_seen = state.step * config.batch_size;
      r.train_loss = window_loss / static_cast<double>(window_steps);
      r.grad_norm = window_grad;
      r.ms_per_step = std::chrono::duration<double, std::milli>(Clock::now() - window_start).count() /
                      static_cast<double>(window_steps);
      std::vector<double> iso_err, aniso_err;
      evaluate(r, state.params, &iso_err, &aniso_err);
      const double best_loss = log.records[log.best_index()].test_loss;
      log.records.push_back(r);
      persist(r);
      if (r.test_loss < best_loss) {
        result.best = state;
        result.best_iso_errors = std::move(iso_err);
        result.best_aniso_errors = std::move(aniso_err);
        if (dir) save_checkpoint(best_path, result.best);
      }
      if (dir) save_checkpoint(last_path, state);

      over_count = r.train_loss > kDivergenceFactor * log.records.front().train_loss ? over_count + 1 : 0;
      if (over_count >= kDivergencePatience) {
        throw DivergenceError(fmt::format(
            "seed {}: training loss above {}x its initial value for {} evaluations", seed,
            kDivergenceFactor, kDivergencePatience));
      }
      window_loss = 0.0;
      window_steps = 0;
      window_grad = 0.0;
      window_start = Clock::now();
    }
    if (options.stop_after && state.step >= *options.stop_after && state.step < config.steps) {
      result.last = state;
      return result;
    }
  }
  result.last = std::move(state);
  result.finished = true;
  return result;
}

#define ICLBENCH_INSTANTIATE(Real)                                                              \
  template ad::Var<Real> training_loss(const ad::Var<Real>&, const ad::Var<Real>&, std::size_t); \
  template double clip_gradients(ad::GradientSet<Real>&, double);                               \
  template void adam_step(Params<Real>&, const ad::GradientSet<Real>&, AdamState<Real>&,        \
                          const TrainConfig&);                                                  \
  template TrainResult<Real> train(const ModelConfig&, const TrainConfig&, std::uint64_t,       \
                                   const EvalBanks&, const TrainOptions&);

ICLBENCH_INSTANTIATE(float)
ICLBENCH_INSTANTIATE(double)

}  // namespace iclbench
