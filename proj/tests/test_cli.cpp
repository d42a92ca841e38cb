#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "iclbench/datagen.hpp"

using namespace iclbench;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = fmt::format("{} {} 2>&1", ICLBENCH_CLI, args);
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("iclbench-test-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template <class T>
T read_at(const std::string& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof v);
  return v;
}

const char* kManifest = R"(
[experiment]
out = runs
seeds = 1, 2, 3, 4, 5
bank_size = 16

[defaults]
d_model = 8
heads = 2
k = 4
steps = 6
eval_every = 3
batch_size = 2
)";

fs::path write_manifest(const fs::path& dir, const std::string& extra) {
  std::ofstream(dir / "m.ini") << kManifest << extra;
  return dir / "m.ini";
}

std::string matrix() {
  std::string s;
  for (const char* kind : {"quadratic", "linear"}) {
    for (int layers : {1, 3, 6}) s += fmt::format("[run.{0}-{1}L]\nattention = {0}\nlayers = {1}\n", kind, layers);
  }
  return s;
}

}  // namespace

TEST_CASE("generate writes a deterministic bank") {
  const auto dir = scratch("generate");
  auto a = run(fmt::format("generate --seed 5 --count 10000 --out {}", (dir / "a.bin").string()));
  REQUIRE(a.code == 0);
  auto b = run(fmt::format("generate --seed 5 --count 10000 --out {}", (dir / "b.bin").string()));
  REQUIRE(b.code == 0);
  const auto bytes = slurp(dir / "a.bin");
  CHECK(bytes == slurp(dir / "b.bin"));
  CHECK(bytes.substr(0, 8) == std::string("ICLBANK\0", 8));
  CHECK(read_at<std::uint32_t>(bytes, 12) == 5);
  CHECK(read_at<std::uint32_t>(bytes, 16) == 10);
  CHECK(read_at<std::uint64_t>(bytes, 24) == 10000);
  const auto bank = read_bank(dir / "a.bin");
  CHECK(bank.size() == 10000);

  run(fmt::format("generate --seed 6 --count 100 --out {}", (dir / "c.bin").string()));
  CHECK(slurp(dir / "c.bin") != slurp(dir / "a.bin").substr(0, fs::file_size(dir / "c.bin")));
}

TEST_CASE("generate reports anisotropic variances") {
  const auto dir = scratch("aniso");
  const auto r = run(fmt::format("generate --seed 3 --count 10000 --covariance anisotropic --out {} --csv {}",
                                 (dir / "a.bin").string(), (dir / "a.csv").string()));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "a.csv"));
  const auto v = empirical_variances(read_bank(dir / "a.bin"));
  const std::vector<double> expected = {0.5, 1.0, 1.5, 1.0, 1.75};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(v[i] == doctest::Approx(expected[i]).epsilon(0.03));
    CHECK(r.out.find(fmt::format("{:.4f}", v[i])) != std::string::npos);
  }
}

TEST_CASE("dry run prints the plan and touches nothing") {
  const auto dir = scratch("dry");
  const auto manifest = write_manifest(dir, matrix());
  const auto r = run(fmt::format("train --manifest {} --dry-run", manifest.string()));
  CHECK(r.code == 0);
  CHECK(r.out.find("30") != std::string::npos);
  CHECK(r.out.find("quadratic-6L") != std::string::npos);
  CHECK(!fs::exists(dir / "runs"));
}

TEST_CASE("train, resume and report through the binary") {
  const auto dir = scratch("train");
  const auto manifest = write_manifest(dir, "[run.q]\nattention = quadratic\nlayers = 1\n"
                                            "[run.l]\nattention = linear\nlayers = 1\n");
  auto r = run(fmt::format("train --manifest {} --seeds 1,2 --jobs 1", manifest.string()));
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "runs" / "q" / "seed-2" / "final.json"));
  CHECK(!fs::exists(dir / "runs" / "q" / "seed-3"));
  const auto log = slurp(dir / "runs" / "l" / "seed-1" / "log.jsonl");

  r = run(fmt::format("train --manifest {} --seeds 1,2 --resume", manifest.string()));
  CHECK(r.code == 0);
  CHECK(r.out.find("already") != std::string::npos);
  CHECK(slurp(dir / "runs" / "l" / "seed-1" / "log.jsonl") == log);

  r = run(fmt::format("report --out {}", (dir / "runs").string()));
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "runs" / "report" / "report.txt"));
  CHECK(fs::exists(dir / "runs" / "report" / "plots" / "robustness-linear.svg"));
  const auto first = slurp(dir / "runs" / "report" / "report.json");
  r = run(fmt::format("report --out {} --ci-mode appendix-literal --report-dir {}", (dir / "runs").string(),
                      (dir / "lit").string()));
  CHECK(r.code == 0);
  CHECK(slurp(dir / "lit" / "report.json").find("appendix-literal") != std::string::npos);
  r = run(fmt::format("report --out {}", (dir / "runs").string()));
  CHECK(slurp(dir / "runs" / "report" / "report.json") == first);
}

TEST_CASE("exit codes") {
  const auto dir = scratch("codes");
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("generate --count 5").code == 2);
  CHECK(run("train --manifest /nonexistent/m.ini").code == 3);
  std::ofstream(dir / "bad.ini") << "[run.x]\nlayers = lots\n";
  CHECK(run(fmt::format("train --manifest {}", (dir / "bad.ini").string())).code == 2);
  CHECK(run(fmt::format("report --out {}", (dir / "empty").string())).code == 5);
  fs::create_directories(dir / "empty");
  CHECK(run(fmt::format("report --out {}", (dir / "empty").string())).code == 5);
  CHECK(run("report --out x --ci-mode median").code == 2);
  CHECK(run(fmt::format("generate --seed 1 --out {}/no/such/dir/b.bin", dir.string())).code == 3);

  const auto manifest = write_manifest(dir, "[run.unstable]\nattention = quadratic\nlayers = 1\n"
                                            "learning_rate = 1e6\ngrad_clip = 1e30\nsteps = 300\neval_every = 1\n");
  CHECK(run(fmt::format("train --manifest {} --seed 1", manifest.string())).code == 4);
  CHECK(run("--help").code == 0);
}

TEST_CASE("sweep command ranks values") {
  const auto dir = scratch("sweep");
  const auto manifest = write_manifest(dir, "[run.base]\nattention = linear\nlayers = 1\n"
                                            "[sweep.phi]\nbase = base\naxis = feature_map\n"
                                            "values = identity, squared_relu\nsteps = 3\n");
  const auto r = run(fmt::format("sweep --manifest {} --sweep phi --seed 1", manifest.string()));
  CHECK(r.code == 0);
  CHECK(r.out.find("winner: feature_map =") != std::string::npos);
  CHECK(fs::exists(dir / "runs" / "sweep-phi"));
}

TEST_CASE("bench prints both kernels") {
  const auto r = run("bench --seq 1,8,16 --d-head 4 --reps 3");
  CHECK(r.code == 0);
  CHECK(r.out.find("quadratic") != std::string::npos);
  CHECK(r.out.find("linear-squared_relu") != std::string::npos);
  CHECK(r.out.find("T=16/T=8") != std::string::npos);
  CHECK(run("bench --seq 16,8").code == 2);
}
