#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "iclbench/autodiff.hpp"
#include "iclbench/datagen.hpp"
#include "iclbench/feature_map.hpp"
#include "iclbench/kernels.hpp"
#include "iclbench/rng.hpp"
#include "iclbench/tensor.hpp"

namespace iclbench {

enum class AttentionKind { Quadratic, Linear };

struct ModelConfig {
  AttentionKind attention = AttentionKind::Quadratic;
  FeatureMapKind feature_map = FeatureMapKind::SquaredRelu;  // Linear only
  std::size_t layers = 3;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t d_x = 5;
  std::size_t k = 10;
  double eps = 1e-6;     // linear-attention denominator
  double ln_eps = 1e-5;  // layer norm
  kernels::StateMode state_mode = kernels::StateMode::Store;

  std::size_t seq_len() const { return 2 * k + 1; }
  std::size_t d_head() const { return d_model / heads; }
  std::size_t token_dim() const { return d_x + 1; }
  // Throws ConfigError.
  void validate() const;
  // "quadratic" or "linear-<feature map>".
  std::string attention_label() const;
};

enum class InitKind { Normal, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::Normal;
};

// Ordered parameter tensors: read-in, positional table, blocks, final norm,
// read-out.
std::vector<ParamSpec> param_specs(const ModelConfig& config);
// Closed form; equals the sum of numel over param_specs().
std::size_t count_params(const ModelConfig& config);
std::size_t count_block_params(const ModelConfig& config);

template <class Real>
struct Params {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t numel() const;
  // Throws ConfigError for an unknown name.
  std::size_t index_of(const std::string& name) const;

  template <class Other>
  Params<Other> cast() const {
    Params<Other> out;
    out.names = names;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<Other>());
    return out;
  }
  bool operator==(const Params&) const = default;
};

// Weights ~ N(0, 0.02^2) (read-in, positional table, projections, MLP,
// read-out); biases 0; layer-norm scale 1 and shift 0. Draws follow
// param_specs() order from rng.
template <class Real>
Params<Real> init_params(const ModelConfig& config, RngStream& rng);

// Interleaved raw tokens [B, 2k+1, d_x+1]: x_i occupies slots 0..d_x-1 of
// token 2(i-1), y_i the last slot of token 2i-1, x_query is token 2k.
template <class Real>
Tensor<Real> raw_tokens(const PromptBatch& batch);
// Targets [B, k+1]: y_1..y_k, y_query.
template <class Real>
Tensor<Real> prompt_targets(const PromptBatch& batch);

template <class Real>
struct TokenSequence {
  ad::Var<Real> embedded;                // [B, T, d_model]
  std::vector<std::size_t> x_positions;  // 0, 2, ..., 2k
};

template <class Real>
std::vector<ad::Var<Real>> bind_params(ad::Tape<Real>& tape, const Params<Real>& params,
                                       bool trainable);

// Shared read-in of raw tokens plus learned positional embeddings.
template <class Real>
TokenSequence<Real> embed_tokens(const ModelConfig& config,
                                 const std::vector<ad::Var<Real>>& params,
                                 const ad::Var<Real>& raw);

// Pre-norm transformer stack, final layer norm and scalar read-out at every
// token: [B, T].
template <class Real>
ad::Var<Real> forward_all_positions(const ModelConfig& config,
                                    const std::vector<ad::Var<Real>>& params,
                                    const TokenSequence<Real>& tokens);

// Predictions for y_1..y_k, y_query read at the x-token positions: [B, k+1].
template <class Real>
ad::Var<Real> forward(const ModelConfig& config, const std::vector<ad::Var<Real>>& params,
                      const TokenSequence<Real>& tokens);

// Inference without gradient tracking.
template <class Real>
Tensor<Real> predict(const ModelConfig& config, const Params<Real>& params,
                     const PromptBatch& batch);
template <class Real>
Tensor<Real> predict_tokens(const ModelConfig& config, const Params<Real>& params,
                            const Tensor<Real>& raw);

}  // namespace iclbench
