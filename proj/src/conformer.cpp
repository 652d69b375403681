#include "powerskel/conformer.hpp"

#include <cmath>

#include "powerskel/error.hpp"
#include "powerskel/random.hpp"

namespace powerskel::conformer {

void ConformerConfig::Validate() const {
  Require(k >= 1 && layers >= 1 && heads >= 1 && tokens >= 1 && d_ff >= 1, ErrorKind::kConfig,
          "conformer dimensions must be positive");
  Require(k % heads == 0, ErrorKind::kConfig,
          "k=" + std::to_string(k) + " not divisible by heads=" + std::to_string(heads));
  Require(k % tokens == 0, ErrorKind::kConfig,
          "k=" + std::to_string(k) + " not divisible by tokens=" + std::to_string(tokens));
  Require(kernel >= 1 && kernel % 2 == 1, ErrorKind::kConfig, "kernel size must be odd");
}

namespace {

FeedForwardParams ZeroFF(int width, int d_ff) {
  return {Matrix::Zero(width, d_ff), Vector::Zero(d_ff), Matrix::Zero(d_ff, width),
          Vector::Zero(width)};
}

void FillUniform(Matrix &m, Rng &rng, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.Uniform(-bound, bound);
  }
}

double Sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void CheckTokens(const Matrix &x, int width, const char *what) {
  Require(x.cols() == width && x.rows() >= 1, ErrorKind::kShape,
          std::string(what) + ": expected token width " + std::to_string(width) + ", got " +
              std::to_string(x.cols()));
}

}  // namespace

BlockParams ZeroBlock(const ConformerConfig &config) {
  const int w = config.width();
  const int dk = config.head_dim();
  BlockParams b;
  b.ff1 = ZeroFF(w, config.d_ff);
  b.ff2 = ZeroFF(w, config.d_ff);
  for (int h = 0; h < config.heads; ++h) {
    b.msa.wq.push_back(Matrix::Zero(w, dk));
    b.msa.wk.push_back(Matrix::Zero(w, dk));
    b.msa.wv.push_back(Matrix::Zero(w, dk));
  }
  b.msa.wo = Matrix::Zero(config.k, w);
  b.conv = {Matrix::Zero(w, config.kernel), Vector::Zero(w)};
  b.norm = {Vector::Ones(w), Vector::Zero(w)};
  return b;
}

BackboneParams BackboneParams::Zeros(const ConformerConfig &config) {
  config.Validate();
  const int w = config.width();
  BackboneParams p;
  p.config = config;
  p.embed = {Matrix::Zero(w, w), Vector::Zero(w), Matrix::Zero(config.tokens, w)};
  for (int l = 0; l < config.layers; ++l) {
    p.blocks.push_back(ZeroBlock(config));
    p.blocks.back().norm.gamma.setZero();
  }
  return p;
}

BackboneParams BackboneParams::Init(const ConformerConfig &config, std::uint64_t seed) {
  BackboneParams p = Zeros(config);
  Rng rng(seed);
  const int w = config.width();
  FillUniform(p.embed.w, rng, w);
  for (auto &b : p.blocks) {
    FillUniform(b.ff1.w1, rng, w);
    FillUniform(b.ff1.w2, rng, config.d_ff);
    for (int h = 0; h < config.heads; ++h) {
      FillUniform(b.msa.wq[h], rng, w);
      FillUniform(b.msa.wk[h], rng, w);
      FillUniform(b.msa.wv[h], rng, w);
    }
    FillUniform(b.msa.wo, rng, config.k);
    FillUniform(b.conv.w, rng, config.kernel);
    FillUniform(b.ff2.w1, rng, w);
    FillUniform(b.ff2.w2, rng, config.d_ff);
    b.norm.gamma.setOnes();
  }
  return p;
}

// ---- feed-forward ------------------------------------------------------

Matrix FeedForward(const Matrix &x, const FeedForwardParams &p, FeedForwardTape &tape) {
  CheckTokens(x, static_cast<int>(p.w1.rows()), "ff_module");
  tape.x = x;
  tape.z1 = (x * p.w1).rowwise() + p.b1.transpose();
  tape.a1 = tape.z1.unaryExpr([](double z) { return z * Sigmoid(z); });
  return (tape.a1 * p.w2).rowwise() + p.b2.transpose();
}

Matrix FeedForward(const Matrix &x, const FeedForwardParams &p) {
  FeedForwardTape tape;
  return FeedForward(x, p, tape);
}

Matrix FeedForwardBackward(const FeedForwardTape &tape, const FeedForwardParams &p,
                           const Matrix &d_out, FeedForwardParams &grads) {
  grads.w2.noalias() += tape.a1.transpose() * d_out;
  grads.b2 += d_out.colwise().sum().transpose();
  Matrix d_a1 = d_out * p.w2.transpose();
  const Matrix swish_grad = tape.z1.unaryExpr([](double z) {
    const double s = Sigmoid(z);
    return s + z * s * (1.0 - s);
  });
  const Matrix d_z1 = d_a1.cwiseProduct(swish_grad);
  grads.w1.noalias() += tape.x.transpose() * d_z1;
  grads.b1 += d_z1.colwise().sum().transpose();
  return d_z1 * p.w1.transpose();
}

// ---- attention ---------------------------------------------------------

Matrix MultiHeadSelfAttention(const Matrix &y, const AttentionParams &p,
                              const ConformerConfig &config, AttentionTape &tape) {
  config.Validate();
  CheckTokens(y, config.width(), "msa_module");
  const int n = config.heads;
  const int dk = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Eigen::Index T = y.rows();
  tape.y = y;
  tape.q.resize(n);
  tape.k.resize(n);
  tape.v.resize(n);
  tape.probs.resize(n);
  tape.concat.resize(T, static_cast<Eigen::Index>(n) * dk);
  for (int h = 0; h < n; ++h) {
    tape.q[h] = y * p.wq[h];
    tape.k[h] = y * p.wk[h];
    tape.v[h] = y * p.wv[h];
    Matrix scores = (tape.q[h] * tape.k[h].transpose()) * scale;
    for (Eigen::Index i = 0; i < T; ++i) {
      const double mx = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - mx).exp().matrix();
      scores.row(i) /= scores.row(i).sum();
    }
    tape.probs[h] = std::move(scores);
    tape.concat.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = tape.probs[h] * tape.v[h];
  }
  return tape.concat * p.wo;
}

Matrix MultiHeadSelfAttention(const Matrix &y, const AttentionParams &p,
                              const ConformerConfig &config) {
  AttentionTape tape;
  return MultiHeadSelfAttention(y, p, config, tape);
}

std::vector<Matrix> AttentionWeights(const Matrix &y, const AttentionParams &p,
                                     const ConformerConfig &config) {
  AttentionTape tape;
  MultiHeadSelfAttention(y, p, config, tape);
  return tape.probs;
}

Matrix MultiHeadSelfAttentionBackward(const AttentionTape &tape, const AttentionParams &p,
                                      const ConformerConfig &config, const Matrix &d_out,
                                      AttentionParams &grads) {
  const int dk = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  grads.wo.noalias() += tape.concat.transpose() * d_out;
  const Matrix d_concat = d_out * p.wo.transpose();
  Matrix d_y = Matrix::Zero(tape.y.rows(), tape.y.cols());
  for (int h = 0; h < config.heads; ++h) {
    const auto d_head = d_concat.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
    const Matrix &P = tape.probs[h];
    const Matrix d_p = d_head * tape.v[h].transpose();
    const Matrix d_v = P.transpose() * d_head;
    const Vector row_dot = d_p.cwiseProduct(P).rowwise().sum();
    const Matrix d_scores = (P.array() * (d_p.colwise() - row_dot).array()).matrix() * scale;
    const Matrix d_q = d_scores * tape.k[h];
    const Matrix d_k = d_scores.transpose() * tape.q[h];
    grads.wq[h].noalias() += tape.y.transpose() * d_q;
    grads.wk[h].noalias() += tape.y.transpose() * d_k;
    grads.wv[h].noalias() += tape.y.transpose() * d_v;
    d_y.noalias() += d_q * p.wq[h].transpose();
    d_y.noalias() += d_k * p.wk[h].transpose();
    d_y.noalias() += d_v * p.wv[h].transpose();
  }
  return d_y;
}

// ---- convolution -------------------------------------------------------

Matrix Convolution(const Matrix &y, const ConvParams &p, ConvTape &tape) {
  CheckTokens(y, static_cast<int>(p.w.rows()), "conv_module");
  Require(p.w.cols() % 2 == 1, ErrorKind::kConfig, "conv kernel size must be odd");
  const Eigen::Index T = y.rows();
  const Eigen::Index half = p.w.cols() / 2;
  tape.y = y;
  tape.pre = Matrix::Zero(T, y.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index j = 0; j < p.w.cols(); ++j) {
      const Eigen::Index src = t + j - half;
      if (src < 0 || src >= T) continue;
      tape.pre.row(t) += p.w.col(j).transpose().cwiseProduct(y.row(src));
    }
    tape.pre.row(t) += p.b.transpose();
  }
  return tape.pre.cwiseMax(0.0);
}

Matrix Convolution(const Matrix &y, const ConvParams &p) {
  ConvTape tape;
  return Convolution(y, p, tape);
}

Matrix ConvolutionBackward(const ConvTape &tape, const ConvParams &p, const Matrix &d_out,
                           ConvParams &grads) {
  const Eigen::Index T = tape.y.rows();
  const Eigen::Index half = p.w.cols() / 2;
  const Matrix d_pre = d_out.cwiseProduct((tape.pre.array() > 0.0).cast<double>().matrix());
  grads.b += d_pre.colwise().sum().transpose();
  Matrix d_y = Matrix::Zero(T, tape.y.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index j = 0; j < p.w.cols(); ++j) {
      const Eigen::Index src = t + j - half;
      if (src < 0 || src >= T) continue;
      grads.w.col(j) += d_pre.row(t).cwiseProduct(tape.y.row(src)).transpose();
      d_y.row(src) += d_pre.row(t).cwiseProduct(p.w.col(j).transpose());
    }
  }
  return d_y;
}

// ---- layer norm --------------------------------------------------------

Matrix LayerNorm(const Matrix &x, const LayerNormParams &p, LayerNormTape &tape) {
  CheckTokens(x, static_cast<int>(p.gamma.size()), "layernorm");
  const Eigen::Index T = x.rows();
  tape.xhat.resize(T, x.cols());
  tape.inv_std.resize(T);
  Matrix out(T, x.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mean = x.row(t).mean();
    const auto centered = x.row(t).array() - mean;
    const double var = centered.square().mean();
    tape.inv_std[t] = 1.0 / std::sqrt(var + kLayerNormEps);
    tape.xhat.row(t) = (centered * tape.inv_std[t]).matrix();
    out.row(t) = tape.xhat.row(t).cwiseProduct(p.gamma.transpose()) + p.beta.transpose();
  }
  return out;
}

Matrix LayerNorm(const Matrix &x, const LayerNormParams &p) {
  LayerNormTape tape;
  return LayerNorm(x, p, tape);
}

Matrix LayerNormBackward(const LayerNormTape &tape, const LayerNormParams &p, const Matrix &d_out,
                         LayerNormParams &grads) {
  grads.gamma += d_out.cwiseProduct(tape.xhat).colwise().sum().transpose();
  grads.beta += d_out.colwise().sum().transpose();
  Matrix d_x(d_out.rows(), d_out.cols());
  for (Eigen::Index t = 0; t < d_out.rows(); ++t) {
    const Eigen::RowVectorXd d_xhat = d_out.row(t).cwiseProduct(p.gamma.transpose());
    const double mean_d = d_xhat.mean();
    const double mean_dx = d_xhat.cwiseProduct(tape.xhat.row(t)).mean();
    d_x.row(t) =
        tape.inv_std[t] * (d_xhat.array() - mean_d - tape.xhat.row(t).array() * mean_dx).matrix();
  }
  return d_x;
}

// ---- block -------------------------------------------------------------

Matrix ConformerBlock(const Matrix &x, const BlockParams &p, const ConformerConfig &config,
                      BlockTape &tape) {
  const Matrix y_f = x + 0.5 * FeedForward(x, p.ff1, tape.ff1);
  const Matrix y_m = y_f + MultiHeadSelfAttention(y_f, p.msa, config, tape.msa);
  const Matrix y_c = y_m + Convolution(y_m, p.conv, tape.conv);
  const Matrix z = y_c + 0.5 * FeedForward(y_c, p.ff2, tape.ff2);
  return LayerNorm(z, p.norm, tape.norm);
}

Matrix ConformerBlock(const Matrix &x, const BlockParams &p, const ConformerConfig &config) {
  BlockTape tape;
  return ConformerBlock(x, p, config, tape);
}

Matrix ConformerBlockBackward(const BlockTape &tape, const BlockParams &p,
                              const ConformerConfig &config, const Matrix &d_out,
                              BlockParams &grads) {
  const Matrix d_z = LayerNormBackward(tape.norm, p.norm, d_out, grads.norm);
  const Matrix d_yc = d_z + FeedForwardBackward(tape.ff2, p.ff2, 0.5 * d_z, grads.ff2);
  const Matrix d_ym = d_yc + ConvolutionBackward(tape.conv, p.conv, d_yc, grads.conv);
  const Matrix d_yf =
      d_ym + MultiHeadSelfAttentionBackward(tape.msa, p.msa, config, d_ym, grads.msa);
  return d_yf + FeedForwardBackward(tape.ff1, p.ff1, 0.5 * d_yf, grads.ff1);
}

// ---- backbone ----------------------------------------------------------

Matrix Embed(const Vector &x, const EmbedParams &p, const ConformerConfig &config) {
  Require(x.size() == config.k, ErrorKind::kShape,
          "backbone input length " + std::to_string(x.size()) + " != k=" +
              std::to_string(config.k));
  const Matrix tokens = Unflatten(x, config.tokens, config.width());
  return ((tokens * p.w).rowwise() + p.b.transpose()) + p.offset;
}

Vector BackboneForward(const Vector &x, const BackboneParams &params, BackboneTape &tape) {
  const auto &config = params.config;
  tape.tokens_in = Unflatten(x, config.tokens, config.width());
  Matrix h = Embed(x, params.embed, config);
  tape.blocks.resize(params.blocks.size());
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    h = ConformerBlock(h, params.blocks[l], config, tape.blocks[l]);
  }
  return Flatten(h);
}

Vector BackboneForward(const Vector &x, const BackboneParams &params) {
  BackboneTape tape;
  return BackboneForward(x, params, tape);
}

Vector BackboneBackward(const BackboneTape &tape, const BackboneParams &params,
                        const Vector &d_out, BackboneParams &grads) {
  const auto &config = params.config;
  Matrix d_h = Unflatten(d_out, config.tokens, config.width());
  for (std::size_t l = params.blocks.size(); l-- > 0;) {
    d_h = ConformerBlockBackward(tape.blocks[l], params.blocks[l], config, d_h, grads.blocks[l]);
  }
  grads.embed.offset += d_h;
  grads.embed.b += d_h.colwise().sum().transpose();
  grads.embed.w.noalias() += tape.tokens_in.transpose() * d_h;
  return Flatten(Matrix(d_h * params.embed.w.transpose()));
}

}  // namespace powerskel::conformer
