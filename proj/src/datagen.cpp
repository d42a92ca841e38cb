#include "iclbench/datagen.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "iclbench/errors.hpp"

namespace iclbench {

std::vector<double> Covariance::variances(std::size_t d_x) const {
  if (kind == CovarianceKind::Isotropic) return std::vector<double>(d_x, 1.0);
  validate(d_x);
  return diagonal;
}

void Covariance::validate(std::size_t d_x) const {
  if (kind == CovarianceKind::Isotropic) return;
  if (diagonal.size() != d_x) {
    throw ShapeMismatchError(fmt::format(
        "anisotropic diagonal has {} entries, expected d_x = {}", diagonal.size(), d_x));
  }
  for (std::size_t i = 0; i < diagonal.size(); ++i) {
    if (!(diagonal[i] > 0.0)) {
      throw NonPositiveVarianceError(
          fmt::format("covariance diagonal entry {} is {} (must be > 0)", i, diagonal[i]));
    }
  }
}

void PromptBatch::validate() const {
  if (prompts.empty()) throw ShapeMismatchError("prompt batch is empty");
  for (const auto& p : prompts) {
    if (p.d_x != d_x || p.k != k || p.xs.size() != (k + 1) * d_x ||
        p.ys.size() != k + 1 || p.w.dim() != d_x || !(p.covariance == covariance)) {
      throw ShapeMismatchError("prompt batch is not homogeneous");
    }
  }
}

PromptBatch PromptBatch::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > prompts.size()) {
    throw ShapeMismatchError(fmt::format("slice [{}, {}) out of range for {} prompts", begin, end,
                                         prompts.size()));
  }
  PromptBatch out{d_x, k, covariance, {}};
  out.prompts.assign(prompts.begin() + static_cast<std::ptrdiff_t>(begin),
                     prompts.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

float label_of(std::span<const float> w, std::span<const float> x) {
  double acc = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    acc += static_cast<double>(w[j]) * static_cast<double>(x[j]);
  }
  return static_cast<float>(acc);
}

TaskWeights sample_weights(RngStream& rng, std::size_t d_x) {
  TaskWeights tw;
  tw.w.resize(d_x);
  for (auto& v : tw.w) v = static_cast<float>(rng.normal());
  return tw;
}

Prompt sample_prompt(RngStream& rng, const TaskWeights& w, std::size_t k,
                     const Covariance& cov) {
  const std::size_t d_x = w.dim();
  if (d_x == 0 || k == 0) throw ShapeMismatchError("sample_prompt needs d_x >= 1 and k >= 1");
  cov.validate(d_x);
  std::vector<double> scale(d_x, 1.0);
  if (cov.kind == CovarianceKind::Anisotropic) {
    for (std::size_t j = 0; j < d_x; ++j) scale[j] = std::sqrt(cov.diagonal[j]);
  }
  Prompt p;
  p.d_x = d_x;
  p.k = k;
  p.w = w;
  p.covariance = cov;
  p.xs.resize((k + 1) * d_x);
  p.ys.resize(k + 1);
  for (std::size_t i = 0; i <= k; ++i) {
    for (std::size_t j = 0; j < d_x; ++j) {
      p.xs[i * d_x + j] = static_cast<float>(scale[j] * rng.normal());
    }
    p.ys[i] = label_of(w.w, p.x(i));
  }
  return p;
}

PromptBatch sample_batch(RngStream& rng, std::size_t count, std::size_t d_x,
                         std::size_t k, const Covariance& cov) {
  cov.validate(d_x);
  PromptBatch batch{d_x, k, cov, {}};
  batch.prompts.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const TaskWeights w = sample_weights(rng, d_x);
    batch.prompts.push_back(sample_prompt(rng, w, k, cov));
  }
  return batch;
}

PromptBatch make_bank(std::uint64_t seed, std::string_view label, std::size_t count,
                      std::size_t d_x, std::size_t k, const Covariance& cov) {
  RngStream rng(seed, label);
  return sample_batch(rng, count, d_x, k, cov);
}

double ols_predict(const Prompt& prompt) {
  const auto k = static_cast<Eigen::Index>(prompt.k);
  const auto d = static_cast<Eigen::Index>(prompt.d_x);
  Eigen::MatrixXd X(k, d);
  Eigen::VectorXd y(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = prompt.xs[static_cast<std::size_t>(i * d + j)];
    y(i) = prompt.ys[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd w_hat = X.completeOrthogonalDecomposition().solve(y);
  double pred = 0.0;
  const auto q = prompt.query_x();
  for (Eigen::Index j = 0; j < d; ++j) pred += w_hat(j) * q[static_cast<std::size_t>(j)];
  return pred;
}

std::vector<double> ols_predict(const PromptBatch& batch) {
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = ols_predict(batch.prompts[i]);
  return out;
}

namespace {

constexpr char kBankMagic[8] = {'I', 'C', 'L', 'B', 'A', 'N', 'K', '\0'};
constexpr std::uint32_t kBankVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated prompt bank");
  return v;
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_floats(std::istream& is, std::vector<float>& v, std::size_t n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw IoError("truncated prompt bank");
}

}  // namespace

void write_bank(const std::filesystem::path& path, const PromptBatch& batch) {
  batch.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os.write(kBankMagic, sizeof(kBankMagic));
  put(os, kBankVersion);
  put(os, static_cast<std::uint32_t>(batch.d_x));
  put(os, static_cast<std::uint32_t>(batch.k));
  put(os, static_cast<std::uint32_t>(batch.covariance.kind));
  put(os, static_cast<std::uint64_t>(batch.size()));
  for (double v : batch.covariance.variances(batch.d_x)) put(os, static_cast<float>(v));
  for (const auto& p : batch.prompts) {
    put_floats(os, p.w.w);
    put_floats(os, p.xs);
    put_floats(os, p.ys);
  }
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

PromptBatch read_bank(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open {}", path.string()));
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kBankMagic, sizeof(magic)) != 0) {
    throw IoError(fmt::format("{} is not a prompt bank", path.string()));
  }
  if (get<std::uint32_t>(is) != kBankVersion) throw IoError("unsupported prompt bank version");
  PromptBatch batch;
  batch.d_x = get<std::uint32_t>(is);
  batch.k = get<std::uint32_t>(is);
  const auto kind = get<std::uint32_t>(is);
  if (kind > 1) throw IoError("bad covariance kind in prompt bank");
  const auto count = get<std::uint64_t>(is);
  std::vector<double> diag(batch.d_x);
  for (auto& v : diag) v = get<float>(is);
  if (kind == 1) {
    batch.covariance = Covariance::anisotropic(std::move(diag));
  }
  batch.prompts.resize(count);
  for (auto& p : batch.prompts) {
    p.d_x = batch.d_x;
    p.k = batch.k;
    p.covariance = batch.covariance;
    get_floats(is, p.w.w, batch.d_x);
    get_floats(is, p.xs, (batch.k + 1) * batch.d_x);
    get_floats(is, p.ys, batch.k + 1);
  }
  return batch;
}

void write_bank_csv(const std::filesystem::path& path, const PromptBatch& batch) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os << "prompt,role,index";
  for (std::size_t j = 0; j < batch.d_x; ++j) os << ",c" << j;
  os << ",y\n";
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& p = batch.prompts[n];
    os << n << ",w,0";
    for (float v : p.w.w) os << ',' << fmt::format("{}", v);
    os << ",\n";
    for (std::size_t i = 0; i <= p.k; ++i) {
      os << n << ',' << (i == p.k ? "query" : "context") << ',' << i;
      for (float v : p.x(i)) os << ',' << fmt::format("{}", v);
      os << ',' << fmt::format("{}", p.y(i)) << '\n';
    }
  }
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

std::vector<double> empirical_variances(const PromptBatch& batch) {
  std::vector<double> sum(batch.d_x, 0.0), sq(batch.d_x, 0.0);
  std::size_t n = 0;
  for (const auto& p : batch.prompts) {
    for (std::size_t i = 0; i <= p.k; ++i) {
      for (std::size_t j = 0; j < batch.d_x; ++j) {
        const double v = p.x(i)[j];
        sum[j] += v;
        sq[j] += v * v;
      }
      ++n;
    }
  }
  std::vector<double> var(batch.d_x, 0.0);
  if (n < 2) return var;
  for (std::size_t j = 0; j < batch.d_x; ++j) {
    const double mean = sum[j] / static_cast<double>(n);
    var[j] = (sq[j] - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1);
  }
  return var;
}

}  // namespace iclbench
