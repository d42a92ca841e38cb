#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "iclbench/checkpoint.hpp"
#include "iclbench/training.hpp"
#include "support.hpp"

using namespace iclbench;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("iclbench-test-training-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny(AttentionKind kind = AttentionKind::Quadratic) {
  ModelConfig c;
  c.attention = kind;
  c.layers = 1;
  c.d_model = 16;
  c.heads = 2;
  c.k = 4;
  return c;
}

TrainConfig quick(std::size_t steps = 20, std::size_t every = 5) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 4;
  t.steps = steps;
  t.eval_every = every;
  return t;
}

double loss_value(const Tensor<double>& pred, const Tensor<double>& target, std::size_t d_x) {
  ad::Tape<double> t;
  return training_loss(t.constant(pred), t.constant(target), d_x).value().item();
}

ad::GradientSet<double> gradient_set(std::vector<Tensor<double>> g) { return {std::move(g)}; }

}  // namespace

TEST_CASE("training loss") {
  const Tensor<double> y({1, 5}, {1, 2, 3, -1, 2});
  CHECK(loss_value(y, y, 5) == 0.0);
  // Mean square of the targets is 5, so the zero predictor scores 5 / d_x.
  const Tensor<double> t({1, 5}, {1, 3, 1, 3, std::sqrt(5.0)});
  CHECK(loss_value(Tensor<double>({1, 5}), t, 5) == doctest::Approx(1.0).epsilon(1e-12));

  RngStream rng(1, "loss");
  const auto p = testing::random_tensor({7, 11}, rng), q = testing::random_tensor({7, 11}, rng);
  double acc = 0;
  for (std::size_t b = 0; b < 7; ++b) {
    for (std::size_t i = 0; i < 11; ++i) acc += (p[b * 11 + i] - q[b * 11 + i]) * (p[b * 11 + i] - q[b * 11 + i]) / 5.0;
  }
  CHECK(std::abs(loss_value(p, q, 5) - acc / 77.0) < 1e-6);
  CHECK_THROWS_AS(loss_value(p, Tensor<double>({7, 10}), 5), ShapeMismatchError);
}

TEST_CASE("adam first step and fixed point") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  Params<double> params{{"w"}, {Tensor<double>({1}, {0.5})}};
  auto state = AdamState<double>::zeros_like(params);
  adam_step(params, gradient_set({Tensor<double>({1}, {1.0})}), state, cfg);
  CHECK(params.tensors[0][0] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(state.t == 1);

  Params<double> p2{{"a", "b"}, {Tensor<double>({3}, {1, -2, 3}), Tensor<double>({2}, {0.25, 7})}};
  const auto before = p2;
  auto s2 = AdamState<double>::zeros_like(p2);
  for (int i = 0; i < 5; ++i) adam_step(p2, gradient_set({Tensor<double>({3}), Tensor<double>({2})}), s2, cfg);
  CHECK(p2 == before);
}

TEST_CASE("adam matches a scalar recomputation over several steps") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  RngStream rng(2, "adam");
  Params<double> params{{"w"}, {testing::random_tensor({6}, rng)}};
  auto state = AdamState<double>::zeros_like(params);
  std::vector<double> w(params.tensors[0].storage()), m(6, 0.0), v(6, 0.0);
  for (int t = 1; t <= 7; ++t) {
    const auto g = testing::random_tensor({6}, rng);
    adam_step(params, gradient_set({g}), state, cfg);
    for (std::size_t i = 0; i < 6; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(params.tensors[0][i] == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("gradient clipping") {
  auto big = gradient_set({Tensor<double>({2}, {0, 4.0})});
  CHECK(clip_gradients(big, 1.0) == doctest::Approx(4.0));
  CHECK(big.grads[0][1] == doctest::Approx(1.0));
  CHECK(big.global_norm() == doctest::Approx(1.0));

  auto small = gradient_set({Tensor<double>({2}, {0.3, 0.4})});
  const auto copy = small.grads;
  CHECK(clip_gradients(small, 1.0) == doctest::Approx(0.5));
  CHECK(small.grads == copy);

  RngStream rng(3, "clip");
  for (int n = 0; n < 100; ++n) {
    auto g = gradient_set({testing::random_tensor({5, 3}, rng, 3.0), testing::random_tensor({7}, rng, 0.1)});
    clip_gradients(g, 1.0);
    CHECK(g.global_norm() <= 1.0 + 1e-6);
  }
}

TEST_CASE("training batches never coincide with bank prompts") {
  const auto banks = make_eval_banks(7919, 500, 5, 10);
  std::set<std::vector<float>> seen;
  for (const auto* bank : {&banks.iso, &banks.aniso}) {
    for (const auto& p : bank->prompts) seen.insert(p.xs);
  }
  for (std::uint64_t step = 0; step < 50; ++step) {
    for (const auto& p : training_batch(7919, step, 32, 5, 10).prompts) CHECK(!seen.contains(p.xs));
  }
  const auto a = training_batch(1, 3, 4, 5, 10), b = training_batch(1, 3, 4, 5, 10), c = training_batch(1, 4, 4, 5, 10);
  CHECK(a.prompts[0].xs == b.prompts[0].xs);
  CHECK(a.prompts[0].xs != c.prompts[0].xs);
  CHECK(a.covariance.kind == CovarianceKind::Isotropic);
  CHECK(banks.aniso.covariance == Covariance::shifted_benchmark());
}

TEST_CASE("training runs are deterministic and well-formed") {
  const auto banks = make_eval_banks(7919, 64, 5, 4);
  const auto model = tiny();
  const auto cfg = quick();
  const auto a = train<float>(model, cfg, 5, banks);
  const auto b = train<float>(model, cfg, 5, banks);
  CHECK(a.finished);
  CHECK(a.log.same_metrics(b.log));
  CHECK(a.best.params == b.best.params);
  REQUIRE(a.log.records.size() == 5);
  for (std::size_t i = 0; i < a.log.records.size(); ++i) {
    const auto& r = a.log.records[i];
    CHECK(r.step == 5 * i);
    CHECK(r.samples_seen == r.step * 4);
    CHECK(r.grad_norm <= 1.0 + 1e-6);
  }
  const auto best = a.log.best_index();
  for (const auto& r : a.log.records) CHECK(a.log.records[best].test_loss <= r.test_loss);
  CHECK(a.best.step == a.log.records[best].step);
  CHECK(a.last.step == 20);
  CHECK(a.best_iso_errors.size() == 64);

  const auto other = train<float>(model, cfg, 6, banks);
  CHECK(!other.log.same_metrics(a.log));
}

TEST_CASE("interrupted and resumed training equals an uninterrupted run") {
  const auto banks = make_eval_banks(7919, 32, 5, 4);
  for (auto kind : {AttentionKind::Quadratic, AttentionKind::Linear}) {
    const auto model = tiny(kind);
    const auto cfg = quick(30, 5);
    const auto straight_dir = scratch("straight"), split_dir = scratch("split");
    TrainOptions opts;
    opts.config_hash = "abc";
    opts.run_dir = straight_dir;
    const auto straight = train<float>(model, cfg, 9, banks, opts);

    opts.run_dir = split_dir;
    opts.stop_after = 12;
    const auto first = train<float>(model, cfg, 9, banks, opts);
    CHECK(!first.finished);
    opts.stop_after.reset();
    opts.resume = true;
    const auto resumed = train<float>(model, cfg, 9, banks, opts);
    CHECK(resumed.finished);
    CHECK(resumed.log.same_metrics(straight.log));
    CHECK(resumed.last.params == straight.last.params);
    CHECK(resumed.last.adam == straight.last.adam);
    CHECK(resumed.best.params == straight.best.params);
    CHECK(read_log(split_dir / "log.jsonl").same_metrics(straight.log));

    opts.config_hash = "different";
    CHECK_THROWS_AS(train<float>(model, cfg, 9, banks, opts), ConfigError);
  }
}

TEST_CASE("checkpoint round trip") {
  RngStream rng(10, "ckpt");
  const auto model = tiny();
  Checkpoint<float> c;
  c.step = 77;
  c.params = init_params<float>(model, rng);
  c.adam = AdamState<float>::zeros_like(c.params);
  c.adam.t = 77;
  for (auto& m : c.adam.m) {
    for (auto& v : m.data()) v = float(rng.normal());
  }
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "c.bin", c);
  const auto back = load_checkpoint<float>(dir / "c.bin");
  CHECK(back.step == 77);
  CHECK(back.params == c.params);
  CHECK(back.adam == c.adam);
  const auto batch = sample_batch(rng, 5, 5, 4, Covariance::isotropic());
  CHECK(predict(model, back.params, batch) == predict(model, c.params, batch));

  CHECK_THROWS_AS(load_checkpoint<double>(dir / "c.bin"), IoError);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "missing.bin"), IoError);
  const auto size = fs::file_size(dir / "c.bin");
  fs::resize_file(dir / "c.bin", size / 2);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "c.bin"), IoError);

  Checkpoint<double> d{3, c.params.cast<double>(), AdamState<double>::zeros_like(c.params.cast<double>())};
  save_checkpoint(dir / "d.bin", d);
  CHECK(load_checkpoint<double>(dir / "d.bin").params == d.params);
}

TEST_CASE("run log JSON lines") {
  RunLog log;
  log.seed = 3;
  log.config_hash = "h1";
  log.manifest_hash = "m1";
  log.batch_size = 8;
  log.records = {{0, 0, 1.5, 1.25, 1.125, 0.5, 0.0}, {10, 80, 0.75, 0.625, 0.7, 1.0, 3.5}};
  const auto dir = scratch("log");
  {
    std::ofstream os(dir / "log.jsonl");
    for (const auto& r : log.records) write_log_record(os, r, log);
  }
  const auto back = read_log(dir / "log.jsonl");
  CHECK(back.same_metrics(log));
  CHECK(back.batch_size == 8);
  CHECK(back.seed == 3);
  CHECK(back.config_hash == "h1");

  std::ostringstream bad;
  write_log_record(bad, log.records[1], log);
  write_log_record(bad, log.records[0], log);
  std::ofstream(dir / "bad.jsonl") << bad.str();
  CHECK_THROWS_AS(read_log(dir / "bad.jsonl"), IoError);
}

TEST_CASE("divergence is detected") {
  const auto banks = make_eval_banks(7919, 16, 5, 4);
  auto cfg = quick(400, 1);
  cfg.learning_rate = 1e6;
  cfg.grad_clip_max_norm = 1e30;
  CHECK_THROWS_AS(train<float>(tiny(), cfg, 1, banks), DivergenceError);
}

TEST_CASE("invalid training configs are rejected") {
  TrainConfig t;
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.learning_rate = -1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.grad_clip_max_norm = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  CHECK(parse_precision("f64") == Precision::F64);
  CHECK_THROWS_AS(parse_precision("f16"), ConfigError);
}
