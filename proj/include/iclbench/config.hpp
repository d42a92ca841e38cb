#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iclbench/model.hpp"
#include "iclbench/training.hpp"

// Experiment manifests are INI files:
//
//   [experiment]
//   out = runs/desk          ; relative to the manifest's directory
//   seeds = 42, 100, 7
//   bank_seed = 7919         ; evaluation banks
//   bank_size = 10000
//   eval_chunk = 32
//
//   [defaults]               ; applied to every run, overridable per run
//   d_model = 64
//
//   [run.quadratic-3L]
//   attention = quadratic    ; or linear
//   feature_map = squared_relu
//   layers = 3
//   learning_rate = 1e-4
//   ...
//
//   [sweep.lr]
//   base = quadratic-3L
//   axis = learning_rate     ; learning_rate | batch_size | steps | feature_map
//   values = 5e-5, 1e-4, 3e-4, 1e-3
//   steps = 500              ; optional reduced budget
//   seeds = 42               ; optional
namespace iclbench {

struct RunSpec {
  std::string name;
  ModelConfig model;
  TrainConfig train;
};

enum class SweepAxis { LearningRate, BatchSize, Steps, FeatureMap };
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);

struct SweepSpec {
  std::string name;
  std::string base;
  SweepAxis axis = SweepAxis::LearningRate;
  std::vector<std::string> values;
  std::optional<std::size_t> steps;
  std::vector<std::uint64_t> seeds;  // empty: the base run's seeds
};

struct ExperimentManifest {
  std::filesystem::path out;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  std::uint64_t bank_seed = 7919;
  std::size_t bank_size = 10000;
  std::size_t eval_chunk = 32;
  std::vector<RunSpec> runs;
  std::vector<SweepSpec> sweeps;
  // Hash of the manifest text as read.
  std::string hash;

  const RunSpec& run(std::string_view name) const;
  const SweepSpec& sweep(std::string_view name) const;
};

// Throws ConfigError (bad keys or values) or IoError (unreadable file).
ExperimentManifest parse_manifest(const std::string& text,
                                  const std::filesystem::path& base_dir = ".");
ExperimentManifest load_manifest(const std::filesystem::path& path);

// Canonical INI for one run including the evaluation-bank settings it
// depends on; written as config.ini in the run directory.
std::string run_config_text(const RunSpec& run, const ExperimentManifest& manifest);
RunSpec parse_run_config(const std::string& text);

// 16 hex digits of FNV-1a over the text.
std::string text_hash(std::string_view text);
std::string config_hash(const RunSpec& run, const ExperimentManifest& manifest);

// The run with one axis replaced by `value`; named "<base>@<axis>=<value>".
RunSpec apply_sweep_value(const RunSpec& base, const SweepSpec& sweep, const std::string& value);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace iclbench
