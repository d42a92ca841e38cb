#include "iclbench/checkpoint.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>
#include <string>

namespace iclbench {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

template <class Real>
AdamState<Real> AdamState<Real>::zeros_like(const Params<Real>& params) {
  AdamState s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  }
  return s;
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& ckpt) {
  const auto& p = ckpt.params;
  if (ckpt.adam.m.size() != p.size() || ckpt.adam.v.size() != p.size()) {
    throw ShapeMismatchError("save_checkpoint: optimizer state does not match parameters");
  }
  std::vector<std::string> names;
  std::vector<const Tensor<Real>*> tensors;
  for (std::size_t i = 0; i < p.size(); ++i) {
    names.push_back(p.names[i]);
    tensors.push_back(&p.tensors[i]);
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    names.push_back("adam.m/" + p.names[i]);
    tensors.push_back(&ckpt.adam.m[i]);
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    names.push_back("adam.v/" + p.names[i]);
    tensors.push_back(&ckpt.adam.v[i]);
  }

  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(fmt::format("cannot open {} for writing", tmp.string()));
    os.write(kMagic, sizeof(kMagic));
    put(os, kVersion);
    put(os, static_cast<std::uint32_t>(sizeof(Real)));
    put(os, ckpt.step);
    put(os, ckpt.adam.t);
    put(os, static_cast<std::uint32_t>(names.size()));
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < names.size(); ++i) {
      put(os, static_cast<std::uint32_t>(names[i].size()));
      os.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
      put(os, static_cast<std::uint32_t>(tensors[i]->rank()));
      for (std::size_t d : tensors[i]->shape()) put(os, static_cast<std::uint64_t>(d));
      put(os, offset);
      offset += tensors[i]->numel();
    }
    for (const auto* t : tensors) {
      os.write(reinterpret_cast<const char*>(t->ptr()),
               static_cast<std::streamsize>(t->numel() * sizeof(Real)));
    }
    if (!os) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot move checkpoint into {}: {}", path.string(), ec.message()));
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open {}", path.string()));
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError(fmt::format("{} is not a checkpoint", path.string()));
  }
  if (get<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
  if (get<std::uint32_t>(is) != sizeof(Real)) {
    throw IoError(fmt::format("{} was written with a different precision", path.string()));
  }
  Checkpoint<Real> ckpt;
  ckpt.step = get<std::uint64_t>(is);
  ckpt.adam.t = get<std::uint64_t>(is);
  const auto count = get<std::uint32_t>(is);
  if (count % 3 != 0) throw IoError("checkpoint tensor count is not a multiple of 3");
  std::vector<std::string> names(count);
  std::vector<Shape> shapes(count);
  std::uint64_t expected = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    names[i].resize(get<std::uint32_t>(is));
    is.read(names[i].data(), static_cast<std::streamsize>(names[i].size()));
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) shapes[i].push_back(get<std::uint64_t>(is));
    if (get<std::uint64_t>(is) != expected) throw IoError("checkpoint offsets are not contiguous");
    expected += shape_numel(shapes[i]);
  }
  const std::size_t n = count / 3;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<Real> t(shapes[i]);
    is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(Real)));
    if (!is) throw IoError("truncated checkpoint payload");
    if (i < n) {
      ckpt.params.names.push_back(names[i]);
      ckpt.params.tensors.push_back(std::move(t));
    } else if (i < 2 * n) {
      if (names[i] != "adam.m/" + names[i - n]) throw IoError("checkpoint moment names out of order");
      ckpt.adam.m.push_back(std::move(t));
    } else {
      if (names[i] != "adam.v/" + names[i - 2 * n]) throw IoError("checkpoint moment names out of order");
      ckpt.adam.v.push_back(std::move(t));
    }
  }
  return ckpt;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace iclbench
