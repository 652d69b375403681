#pragma once

#include <concepts>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "powerskel/datamodel.hpp"

namespace powerskel::conformer {

/// Backbone shape. The k-dimensional input is read as `tokens` rows of width
/// k / tokens (one row per sniffing path by default); attention heads project
/// each token to d_k = k / heads, so the concatenated heads are k wide.
struct ConformerConfig {
  int k = 612;
  int tokens = 12;
  int layers = 4;   // L
  int heads = 6;    // n
  int d_ff = 128;
  int kernel = 15;  // Ke

  int width() const { return k / tokens; }
  int head_dim() const { return k / heads; }
  void Validate() const;

  friend bool operator==(const ConformerConfig &, const ConformerConfig &) = default;
};

struct FeedForwardParams {
  Matrix w1;  // width x d_ff
  Vector b1;
  Matrix w2;  // d_ff x width
  Vector b2;
};

struct AttentionParams {
  std::vector<Matrix> wq;  // per head: width x d_k
  std::vector<Matrix> wk;
  std::vector<Matrix> wv;
  Matrix wo;  // k x width
};

struct ConvParams {
  Matrix w;  // width x Ke, depthwise along the token axis
  Vector b;
};

struct LayerNormParams {
  Vector gamma;
  Vector beta;
};

struct BlockParams {
  FeedForwardParams ff1;
  AttentionParams msa;
  ConvParams conv;
  FeedForwardParams ff2;
  LayerNormParams norm;
};

/// Input layer: shared per-token affine map plus a learned per-token offset.
struct EmbedParams {
  Matrix w;  // width x width
  Vector b;
  Matrix offset;  // tokens x width
};

struct BackboneParams {
  ConformerConfig config;
  EmbedParams embed;
  std::vector<BlockParams> blocks;

  /// Shape-correct parameters with every entry zero (LayerNorm gamma included).
  static BackboneParams Zeros(const ConformerConfig &config);
  /// Fan-in scaled uniform init; LayerNorm gamma = 1, biases and offsets 0.
  static BackboneParams Init(const ConformerConfig &config, std::uint64_t seed);
};

BlockParams ZeroBlock(const ConformerConfig &config);

inline constexpr double kLayerNormEps = 1e-5;

// ---- tensor traversal --------------------------------------------------

template <class T, class U>
concept ParamsOf = std::same_as<std::remove_const_t<T>, U>;

template <class P, class Fn>
  requires ParamsOf<P, FeedForwardParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  fn(prefix + "w1", p.w1);
  fn(prefix + "b1", p.b1);
  fn(prefix + "w2", p.w2);
  fn(prefix + "b2", p.b2);
}

template <class P, class Fn>
  requires ParamsOf<P, AttentionParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    const std::string head = prefix + "head" + std::to_string(h) + ".";
    fn(head + "wq", p.wq[h]);
    fn(head + "wk", p.wk[h]);
    fn(head + "wv", p.wv[h]);
  }
  fn(prefix + "wo", p.wo);
}

template <class P, class Fn>
  requires ParamsOf<P, ConvParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  fn(prefix + "w", p.w);
  fn(prefix + "b", p.b);
}

template <class P, class Fn>
  requires ParamsOf<P, LayerNormParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  fn(prefix + "gamma", p.gamma);
  fn(prefix + "beta", p.beta);
}

template <class P, class Fn>
  requires ParamsOf<P, BlockParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  VisitTensors(p.ff1, prefix + "ff1.", fn);
  VisitTensors(p.msa, prefix + "msa.", fn);
  VisitTensors(p.conv, prefix + "conv.", fn);
  VisitTensors(p.ff2, prefix + "ff2.", fn);
  VisitTensors(p.norm, prefix + "norm.", fn);
}

template <class P, class Fn>
  requires ParamsOf<P, EmbedParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  fn(prefix + "w", p.w);
  fn(prefix + "b", p.b);
  fn(prefix + "offset", p.offset);
}

template <class P, class Fn>
  requires ParamsOf<P, BackboneParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  VisitTensors(p.embed, prefix + "embed.", fn);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    VisitTensors(p.blocks[i], prefix + "block" + std::to_string(i) + ".", fn);
  }
}

template <class P>
std::int64_t ParameterCount(const P &params) {
  std::int64_t n = 0;
  VisitTensors(params, "", [&](const std::string &, const auto &t) { n += t.size(); });
  return n;
}

// ---- forward -----------------------------------------------------------

/// Rows of `x` are tokens. FF(x) = Swish(x W1 + b1) W2 + b2.
Matrix FeedForward(const Matrix &x, const FeedForwardParams &p);
Matrix MultiHeadSelfAttention(const Matrix &y, const AttentionParams &p,
                              const ConformerConfig &config);
/// Per-head softmax(Q K^T / sqrt(d_k)) matrices.
std::vector<Matrix> AttentionWeights(const Matrix &y, const AttentionParams &p,
                                     const ConformerConfig &config);
/// ReLU(depthwise same-padded convolution along tokens + bias).
Matrix Convolution(const Matrix &y, const ConvParams &p);
Matrix LayerNorm(const Matrix &x, const LayerNormParams &p);
Matrix ConformerBlock(const Matrix &x, const BlockParams &p, const ConformerConfig &config);

/// Reshapes the k-vector into tokens x width and applies the input layer.
Matrix Embed(const Vector &x, const EmbedParams &p, const ConformerConfig &config);
/// Input layer, then L Conformer blocks; the result is flattened back to k.
Vector BackboneForward(const Vector &x, const BackboneParams &params);

// ---- backward ----------------------------------------------------------
// Each *Backward accumulates parameter gradients into `grads` (same shapes as
// the parameters) and returns the gradient w.r.t. the module input.

struct FeedForwardTape {
  Matrix x, z1, a1;
};
Matrix FeedForward(const Matrix &x, const FeedForwardParams &p, FeedForwardTape &tape);
Matrix FeedForwardBackward(const FeedForwardTape &tape, const FeedForwardParams &p,
                           const Matrix &d_out, FeedForwardParams &grads);

struct AttentionTape {
  Matrix y;
  std::vector<Matrix> q, k, v, probs;
  Matrix concat;
};
Matrix MultiHeadSelfAttention(const Matrix &y, const AttentionParams &p,
                              const ConformerConfig &config, AttentionTape &tape);
Matrix MultiHeadSelfAttentionBackward(const AttentionTape &tape, const AttentionParams &p,
                                      const ConformerConfig &config, const Matrix &d_out,
                                      AttentionParams &grads);

struct ConvTape {
  Matrix y, pre;
};
Matrix Convolution(const Matrix &y, const ConvParams &p, ConvTape &tape);
Matrix ConvolutionBackward(const ConvTape &tape, const ConvParams &p, const Matrix &d_out,
                           ConvParams &grads);

struct LayerNormTape {
  Matrix xhat;
  Vector inv_std;
};
Matrix LayerNorm(const Matrix &x, const LayerNormParams &p, LayerNormTape &tape);
Matrix LayerNormBackward(const LayerNormTape &tape, const LayerNormParams &p, const Matrix &d_out,
                         LayerNormParams &grads);

struct BlockTape {
  FeedForwardTape ff1;
  AttentionTape msa;
  ConvTape conv;
  FeedForwardTape ff2;
  LayerNormTape norm;
};
Matrix ConformerBlock(const Matrix &x, const BlockParams &p, const ConformerConfig &config,
                      BlockTape &tape);
Matrix ConformerBlockBackward(const BlockTape &tape, const BlockParams &p,
                              const ConformerConfig &config, const Matrix &d_out,
                              BlockParams &grads);

struct BackboneTape {
  Matrix tokens_in;
  std::vector<BlockTape> blocks;
};
Vector BackboneForward(const Vector &x, const BackboneParams &params, BackboneTape &tape);
/// Returns d/dx; parameter gradients are added into `grads`.
Vector BackboneBackward(const BackboneTape &tape, const BackboneParams &params,
                        const Vector &d_out, BackboneParams &grads);

}  // namespace powerskel::conformer
