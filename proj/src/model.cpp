#include "iclbench/model.hpp"

#include <fmt/format.h>

#include "iclbench/attention.hpp"
#include "iclbench/errors.hpp"

namespace iclbench {

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || mlp_ratio == 0 || d_x == 0 || k == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError(fmt::format("d_model = {} is not divisible by heads = {}", d_model, heads));
  }
  if (!(eps > 0.0)) throw ConfigError("attention eps must be > 0");
  if (!(ln_eps > 0.0)) throw ConfigError("layer-norm eps must be > 0");
}

std::string ModelConfig::attention_label() const {
  if (attention == AttentionKind::Quadratic) return "quadratic";
  return "linear-" + std::string(to_string(feature_map));
}

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, h = c.mlp_ratio * c.d_model;
  std::vector<ParamSpec> specs = {
      {"read_in.weight", {c.token_dim(), d}, InitKind::Normal},
      {"read_in.bias", {d}, InitKind::Zeros},
      {"pos_emb", {c.seq_len(), d}, InitKind::Normal},
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = fmt::format("blocks.{}.", l);
    specs.push_back({p + "ln1.scale", {d}, InitKind::Ones});
    specs.push_back({p + "ln1.shift", {d}, InitKind::Zeros});
    for (const char* w : {"q", "k", "v", "o"}) {
      specs.push_back({p + "attn.w" + w, {d, d}, InitKind::Normal});
      specs.push_back({p + "attn.b" + w, {d}, InitKind::Zeros});
    }
    specs.push_back({p + "ln2.scale", {d}, InitKind::Ones});
    specs.push_back({p + "ln2.shift", {d}, InitKind::Zeros});
    specs.push_back({p + "mlp.w1", {d, h}, InitKind::Normal});
    specs.push_back({p + "mlp.b1", {h}, InitKind::Zeros});
    specs.push_back({p + "mlp.w2", {h, d}, InitKind::Normal});
    specs.push_back({p + "mlp.b2", {d}, InitKind::Zeros});
  }
  specs.push_back({"ln_f.scale", {d}, InitKind::Ones});
  specs.push_back({"ln_f.shift", {d}, InitKind::Zeros});
  specs.push_back({"read_out.weight", {d, 1}, InitKind::Normal});
  specs.push_back({"read_out.bias", {1}, InitKind::Zeros});
  return specs;
}

std::size_t count_block_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, r = c.mlp_ratio;
  return (4 + 2 * r) * d * d + (9 + r) * d;
}

std::size_t count_params(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  const std::size_t io = c.token_dim() * d + d + c.seq_len() * d + 2 * d + d + 1;
  return io + c.layers * count_block_params(c);
}

template <class Real>
std::size_t Params<Real>::numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

template <class Real>
std::size_t Params<Real>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ConfigError("unknown parameter " + name);
}

template <class Real>
Params<Real> init_params(const ModelConfig& config, RngStream& rng) {
  constexpr double kInitStd = 0.02;
  Params<Real> p;
  for (const auto& spec : param_specs(config)) {
    Tensor<Real> t(spec.shape);
    switch (spec.init) {
      case InitKind::Normal:
        for (auto& v : t.data()) v = static_cast<Real>(kInitStd * rng.normal());
        break;
      case InitKind::Zeros:
        break;
      case InitKind::Ones:
        t.fill(Real(1));
        break;
    }
    p.names.push_back(spec.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <class Real>
Tensor<Real> raw_tokens(const PromptBatch& batch) {
  batch.validate();
  const std::size_t B = batch.size(), k = batch.k, dx = batch.d_x, T = 2 * k + 1, w = dx + 1;
  Tensor<Real> raw({B, T, w});
  for (std::size_t b = 0; b < B; ++b) {
    const Prompt& p = batch.prompts[b];
    Real* base = raw.ptr() + b * T * w;
    for (std::size_t i = 0; i <= k; ++i) {
      Real* xt = base + 2 * i * w;
      for (std::size_t j = 0; j < dx; ++j) xt[j] = static_cast<Real>(p.x(i)[j]);
      if (i < k) base[(2 * i + 1) * w + dx] = static_cast<Real>(p.y(i));
    }
  }
  return raw;
}

template <class Real>
Tensor<Real> prompt_targets(const PromptBatch& batch) {
  batch.validate();
  Tensor<Real> y({batch.size(), batch.k + 1});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i <= batch.k; ++i) {
      y[b * (batch.k + 1) + i] = static_cast<Real>(batch.prompts[b].y(i));
    }
  }
  return y;
}

template <class Real>
std::vector<ad::Var<Real>> bind_params(ad::Tape<Real>& tape, const Params<Real>& params,
                                       bool trainable) {
  std::vector<ad::Var<Real>> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.push_back(trainable ? tape.parameter(i, params.tensors[i])
                             : tape.constant(params.tensors[i]));
  }
  return vars;
}

namespace {

// Indices into the param_specs() ordering.
constexpr std::size_t kReadInW = 0, kReadInB = 1, kPos = 2, kBlockBase = 3, kPerBlock = 16;

struct BlockIdx {
  std::size_t ln1s, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2s, ln2b, w1, b1, w2, b2;
};

BlockIdx block_idx(std::size_t layer) {
  const std::size_t o = kBlockBase + layer * kPerBlock;
  return {o, o + 1, o + 2, o + 3, o + 4, o + 5, o + 6, o + 7, o + 8, o + 9,
          o + 10, o + 11, o + 12, o + 13, o + 14, o + 15};
}

template <class Real>
ad::Var<Real> linear(const ad::Var<Real>& x, const ad::Var<Real>& w, const ad::Var<Real>& b) {
  return ad::add(ad::matmul(x, w), b);
}

template <class Real>
ad::Var<Real> split_heads(const ad::Var<Real>& x, std::size_t B, std::size_t T, std::size_t H,
                          std::size_t dh) {
  return ad::transpose(ad::reshape(x, {B, T, H, dh}), 1, 2);
}

template <class Real>
ad::Var<Real> merge_heads(const ad::Var<Real>& x, std::size_t B, std::size_t T, std::size_t d) {
  return ad::reshape(ad::transpose(x, 1, 2), {B, T, d});
}

}  // namespace

template <class Real>
TokenSequence<Real> embed_tokens(const ModelConfig& config,
                                 const std::vector<ad::Var<Real>>& params,
                                 const ad::Var<Real>& raw) {
  config.validate();
  const Shape& s = raw.shape();
  if (s.size() != 3 || s[1] != config.seq_len() || s[2] != config.token_dim()) {
    throw ShapeMismatchError(fmt::format("raw tokens {} do not match [B, {}, {}]", shape_str(s),
                                         config.seq_len(), config.token_dim()));
  }
  TokenSequence<Real> seq;
  seq.embedded = ad::add(linear(raw, params.at(kReadInW), params.at(kReadInB)), params.at(kPos));
  for (std::size_t i = 0; i <= config.k; ++i) seq.x_positions.push_back(2 * i);
  return seq;
}

template <class Real>
ad::Var<Real> forward_all_positions(const ModelConfig& config,
                                    const std::vector<ad::Var<Real>>& params,
                                    const TokenSequence<Real>& tokens) {
  const std::size_t B = tokens.embedded.dim(0), T = config.seq_len(), d = config.d_model;
  const std::size_t H = config.heads, dh = config.d_head();
  const Real ln_eps = static_cast<Real>(config.ln_eps);
  if (params.size() != kBlockBase + config.layers * kPerBlock + 4) {
    throw ShapeMismatchError("parameter list does not match the model config");
  }
  ad::Var<Real> x = tokens.embedded;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const BlockIdx bi = block_idx(l);
    ad::Var<Real> h = ad::layer_norm(x, params[bi.ln1s], params[bi.ln1b], ln_eps);
    auto q = split_heads(linear(h, params[bi.wq], params[bi.bq]), B, T, H, dh);
    auto k = split_heads(linear(h, params[bi.wk], params[bi.bk]), B, T, H, dh);
    auto v = split_heads(linear(h, params[bi.wv], params[bi.bv]), B, T, H, dh);
    ad::Var<Real> a;
    if (config.attention == AttentionKind::Quadratic) {
      a = quadratic_causal_attention(q, k, v);
    } else {
      a = linear_causal_attention_recurrent(q, k, v, config.feature_map,
                                            static_cast<Real>(config.eps), config.state_mode);
    }
    x = ad::add(x, linear(merge_heads(a, B, T, d), params[bi.wo], params[bi.bo]));
    h = ad::layer_norm(x, params[bi.ln2s], params[bi.ln2b], ln_eps);
    h = linear(ad::gelu(linear(h, params[bi.w1], params[bi.b1])), params[bi.w2], params[bi.b2]);
    x = ad::add(x, h);
  }
  const std::size_t head = kBlockBase + config.layers * kPerBlock;
  x = ad::layer_norm(x, params[head], params[head + 1], ln_eps);
  return ad::reshape(linear(x, params[head + 2], params[head + 3]), {B, T});
}

template <class Real>
ad::Var<Real> forward(const ModelConfig& config, const std::vector<ad::Var<Real>>& params,
                      const TokenSequence<Real>& tokens) {
  const auto all = forward_all_positions(config, params, tokens);
  return ad::slice(all, 1, 0, config.seq_len(), 2);
}

template <class Real>
Tensor<Real> predict_tokens(const ModelConfig& config, const Params<Real>& params,
                            const Tensor<Real>& raw) {
  ad::Tape<Real> tape;
  const auto vars = bind_params(tape, params, false);
  const auto tokens = embed_tokens(config, vars, tape.constant(raw));
  return forward_all_positions(config, vars, tokens).value();
}

template <class Real>
Tensor<Real> predict(const ModelConfig& config, const Params<Real>& params,
                     const PromptBatch& batch) {
  ad::Tape<Real> tape;
  const auto vars = bind_params(tape, params, false);
  const auto tokens = embed_tokens(config, vars, tape.constant(raw_tokens<Real>(batch)));
  return forward(config, vars, tokens).value();
}

#define ICLBENCH_INSTANTIATE(Real)                                                              \
  template struct Params<Real>;                                                                 \
  template Params<Real> init_params(const ModelConfig&, RngStream&);                            \
  template Tensor<Real> raw_tokens(const PromptBatch&);                                         \
  template Tensor<Real> prompt_targets(const PromptBatch&);                                     \
  template std::vector<ad::Var<Real>> bind_params(ad::Tape<Real>&, const Params<Real>&, bool);  \
  template TokenSequence<Real> embed_tokens(const ModelConfig&,                                 \
                                            const std::vector<ad::Var<Real>>&,                  \
                                            const ad::Var<Real>&);                              \
  template ad::Var<Real> forward_all_positions(const ModelConfig&,                              \
                                               const std::vector<ad::Var<Real>>&,               \
                                               const TokenSequence<Real>&);                     \
  template ad::Var<Real> forward(const ModelConfig&, const std::vector<ad::Var<Real>>&,         \
                                 const TokenSequence<Real>&);                                   \
  template Tensor<Real> predict(const ModelConfig&, const Params<Real>&, const PromptBatch&);   \
  template Tensor<Real> predict_tokens(const ModelConfig&, const Params<Real>&,                 \
                                       const Tensor<Real>&);

ICLBENCH_INSTANTIATE(float)
ICLBENCH_INSTANTIATE(double)

}  // namespace iclbench
