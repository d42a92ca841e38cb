#include "iclbench/config.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "iclbench/rng.hpp"

namespace iclbench {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: cannot parse '{}'", key, value));
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return parse_number<std::size_t>(key, value);
}

double parse_real(const std::string& key, const std::string& value) {
  return parse_number<double>(key, value);
}

AttentionKind parse_attention(const std::string& v) {
  if (v == "quadratic") return AttentionKind::Quadratic;
  if (v == "linear") return AttentionKind::Linear;
  throw ConfigError(fmt::format("attention: unknown kind '{}' (quadratic or linear)", v));
}

FeatureMapKind feature_map_or_throw(const std::string& v) {
  const auto kind = parse_feature_map(v);
  if (!kind) {
    throw ConfigError(fmt::format(
        "feature_map: unknown map '{}' (identity, relu, squared_relu or quadratic_poly)", v));
  }
  return *kind;
}

kernels::StateMode parse_state_mode(const std::string& v) {
  if (v == "store") return kernels::StateMode::Store;
  if (v == "recompute") return kernels::StateMode::Recompute;
  throw ConfigError(fmt::format("state_mode: unknown value '{}' (store or recompute)", v));
}

const std::set<std::string>& run_keys() {
  static const std::set<std::string> keys = {
      "attention", "feature_map", "layers", "d_model", "heads", "mlp_ratio", "d_x", "k", "eps",
      "ln_eps", "state_mode", "learning_rate", "batch_size", "steps", "grad_clip", "eval_every",
      "precision", "beta1", "beta2", "adam_eps", "seeds"};
  return keys;
}

void apply_run_key(RunSpec& run, const std::string& key, const std::string& value) {
  auto& m = run.model;
  auto& t = run.train;
  try {
    if (key == "attention") m.attention = parse_attention(value);
    else if (key == "feature_map") m.feature_map = feature_map_or_throw(value);
    else if (key == "layers") m.layers = parse_size(key, value);
    else if (key == "d_model") m.d_model = parse_size(key, value);
    else if (key == "heads") m.heads = parse_size(key, value);
    else if (key == "mlp_ratio") m.mlp_ratio = parse_size(key, value);
    else if (key == "d_x") m.d_x = parse_size(key, value);
    else if (key == "k") m.k = parse_size(key, value);
    else if (key == "eps") m.eps = parse_real(key, value);
    else if (key == "ln_eps") m.ln_eps = parse_real(key, value);
    else if (key == "state_mode") m.state_mode = parse_state_mode(value);
    else if (key == "learning_rate") t.learning_rate = parse_real(key, value);
    else if (key == "batch_size") t.batch_size = parse_size(key, value);
    else if (key == "steps") t.steps = parse_size(key, value);
    else if (key == "grad_clip") t.grad_clip_max_norm = parse_real(key, value);
    else if (key == "eval_every") t.eval_every = parse_size(key, value);
    else if (key == "precision") t.precision = parse_precision(value);
    else if (key == "beta1") t.beta1 = parse_real(key, value);
    else if (key == "beta2") t.beta2 = parse_real(key, value);
    else if (key == "adam_eps") t.adam_eps = parse_real(key, value);
    else if (key == "seeds") t.seeds = parse_seed_list(value);
    else throw ConfigError(fmt::format("unknown run key '{}'", key));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("[run.{}] {}", run.name, e.what()));
  }
}

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  return fmt::format("{}", fmt::join(seeds, ", "));
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(text)) seeds.push_back(parse_number<std::uint64_t>("seeds", item));
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::LearningRate: return "learning_rate";
    case SweepAxis::BatchSize: return "batch_size";
    case SweepAxis::Steps: return "steps";
    case SweepAxis::FeatureMap: return "feature_map";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  for (auto a : {SweepAxis::LearningRate, SweepAxis::BatchSize, SweepAxis::Steps, SweepAxis::FeatureMap}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError(fmt::format(
      "unknown sweep axis '{}' (learning_rate, batch_size, steps or feature_map)", name));
}

const RunSpec& ExperimentManifest::run(std::string_view name) const {
  for (const auto& r : runs) {
    if (r.name == name) return r;
  }
  throw ConfigError(fmt::format("manifest has no run named '{}'", name));
}

const SweepSpec& ExperimentManifest::sweep(std::string_view name) const {
  for (const auto& s : sweeps) {
    if (s.name == name) return s;
  }
  throw ConfigError(fmt::format("manifest has no sweep named '{}'", name));
}

std::string text_hash(std::string_view text) { return fmt::format("{:016x}", fnv1a64(text)); }

ExperimentManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("manifest line {}: {}", e.line(), e.message()));
  }

  ExperimentManifest m;
  m.hash = text_hash(text);
  m.out = base_dir / "runs";
  std::vector<std::pair<std::string, std::string>> defaults;
  std::set<std::string> names;

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(fmt::format("key '{}' outside of a section", section));
    }
    if (section == "experiment") {
      for (const auto& [key, node] : body) {
        const auto value = trim(node.data());
        if (key == "out") m.out = base_dir / value;
        else if (key == "seeds") m.seeds = parse_seed_list(value);
        else if (key == "bank_seed") m.bank_seed = parse_number<std::uint64_t>(key, value);
        else if (key == "bank_size") m.bank_size = parse_size(key, value);
        else if (key == "eval_chunk") m.eval_chunk = parse_size(key, value);
        else throw ConfigError(fmt::format("[experiment] unknown key '{}'", key));
      }
    } else if (section == "defaults") {
      for (const auto& [key, node] : body) {
        if (!run_keys().contains(key)) throw ConfigError(fmt::format("[defaults] unknown key '{}'", key));
        defaults.emplace_back(key, trim(node.data()));
      }
    }
  }
  if (m.bank_size == 0) throw ConfigError("[experiment] bank_size must be positive");

  for (const auto& [section, body] : tree) {
    if (section.rfind("run.", 0) == 0) {
      RunSpec run;
      run.name = section.substr(4);
      if (run.name.empty() || run.name.find_first_of("/\\@ ") != std::string::npos) {
        throw ConfigError(fmt::format("invalid run name '{}'", run.name));
      }
      if (!names.insert(run.name).second) throw ConfigError("duplicate run " + run.name);
      run.train.seeds = m.seeds;
      for (const auto& [key, value] : defaults) apply_run_key(run, key, value);
      for (const auto& [key, node] : body) apply_run_key(run, key, trim(node.data()));
      try {
        run.model.validate();
        run.train.validate();
      } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("[run.{}] {}", run.name, e.what()));
      }
      m.runs.push_back(std::move(run));
    } else if (section.rfind("sweep.", 0) == 0) {
      SweepSpec s;
      s.name = section.substr(6);
      for (const auto& [key, node] : body) {
        const auto value = trim(node.data());
        if (key == "base") s.base = value;
        else if (key == "axis") s.axis = parse_sweep_axis(value);
        else if (key == "values") s.values = split_list(value);
        else if (key == "steps") s.steps = parse_size(key, value);
        else if (key == "seeds") s.seeds = parse_seed_list(value);
        else throw ConfigError(fmt::format("[sweep.{}] unknown key '{}'", s.name, key));
      }
      if (s.values.empty()) throw ConfigError(fmt::format("[sweep.{}] needs values", s.name));
      m.sweeps.push_back(std::move(s));
    } else if (section != "experiment" && section != "defaults") {
      throw ConfigError(fmt::format("unknown manifest section [{}]", section));
    }
  }
  for (const auto& s : m.sweeps) {
    const RunSpec& base = m.run(s.base);
    for (const auto& v : s.values) apply_sweep_value(base, s, v);
  }
  return m;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open manifest {}", path.string()));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

std::string run_config_text(const RunSpec& run, const ExperimentManifest& manifest) {
  const auto& m = run.model;
  const auto& t = run.train;
  std::string s;
  s += "[run]\n";
  s += fmt::format("name = {}\n", run.name);
  s += fmt::format("attention = {}\n", m.attention == AttentionKind::Quadratic ? "quadratic" : "linear");
  s += fmt::format("feature_map = {}\n", to_string(m.feature_map));
  s += fmt::format("layers = {}\nd_model = {}\nheads = {}\nmlp_ratio = {}\n", m.layers, m.d_model,
                   m.heads, m.mlp_ratio);
  s += fmt::format("d_x = {}\nk = {}\neps = {}\nln_eps = {}\n", m.d_x, m.k, m.eps, m.ln_eps);
  s += fmt::format("state_mode = {}\n", m.state_mode == kernels::StateMode::Store ? "store" : "recompute");
  s += fmt::format("learning_rate = {}\nbatch_size = {}\nsteps = {}\n", t.learning_rate, t.batch_size,
                   t.steps);
  s += fmt::format("grad_clip = {}\neval_every = {}\nprecision = {}\n", t.grad_clip_max_norm,
                   t.eval_every, to_string(t.precision));
  s += fmt::format("beta1 = {}\nbeta2 = {}\nadam_eps = {}\n", t.beta1, t.beta2, t.adam_eps);
  s += fmt::format("seeds = {}\n", seeds_text(t.seeds));
  s += "\n[eval]\n";
  s += fmt::format("bank_seed = {}\nbank_size = {}\n", manifest.bank_seed, manifest.bank_size);
  return s;
}

RunSpec parse_run_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("run config line {}: {}", e.line(), e.message()));
  }
  RunSpec run;
  const auto section = tree.get_child_optional("run");
  if (!section) throw ConfigError("run config has no [run] section");
  for (const auto& [key, node] : *section) {
    if (key == "name") run.name = trim(node.data());
    else apply_run_key(run, key, trim(node.data()));
  }
  run.model.validate();
  run.train.validate();
  return run;
}

std::string config_hash(const RunSpec& run, const ExperimentManifest& manifest) {
  // The seed list and the run name do not change any single run's result.
  RunSpec canonical = run;
  canonical.name = "";
  canonical.train.seeds = {0};
  return text_hash(run_config_text(canonical, manifest));
}

RunSpec apply_sweep_value(const RunSpec& base, const SweepSpec& sweep, const std::string& value) {
  RunSpec run = base;
  run.name = fmt::format("{}@{}={}", base.name, to_string(sweep.axis), value);
  try {
    switch (sweep.axis) {
      case SweepAxis::LearningRate: run.train.learning_rate = parse_real("learning_rate", value); break;
      case SweepAxis::BatchSize: run.train.batch_size = parse_size("batch_size", value); break;
      case SweepAxis::Steps: run.train.steps = parse_size("steps", value); break;
      case SweepAxis::FeatureMap:
        run.model.attention = AttentionKind::Linear;
        run.model.feature_map = feature_map_or_throw(value);
        break;
    }
    if (sweep.steps && sweep.axis != SweepAxis::Steps) run.train.steps = *sweep.steps;
    if (!sweep.seeds.empty()) run.train.seeds = sweep.seeds;
    run.model.validate();
    run.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("[sweep.{}] {}", sweep.name, e.what()));
  }
  return run;
}

}  // namespace iclbench
