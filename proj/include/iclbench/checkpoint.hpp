#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "iclbench/model.hpp"

namespace iclbench {

// Adam moments aligned with Params::tensors; t counts completed updates.
template <class Real>
struct AdamState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const Params<Real>& params);
  bool operator==(const AdamState&) const = default;
};

template <class Real>
struct Checkpoint {
  std::uint64_t step = 0;
  Params<Real> params;
  AdamState<Real> adam;
};

// File layout (little endian):
//   "ICLCKPT\0", u32 version, u32 element bytes (4 or 8), u64 step,
//   u64 adam t, u32 tensor count,
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank],
//               u64 element offset into the payload,
//   payload of float32 (or float64 when element bytes == 8).
// Tensors are the parameters in order followed by "adam.m/<name>" and
// "adam.v/<name>" for each parameter.
template <class Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& ckpt);
// Throws IoError for a malformed or mismatched file.
template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

}  // namespace iclbench
