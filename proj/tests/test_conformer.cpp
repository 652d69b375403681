#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "powerskel/conformer.hpp"
#include "powerskel/error.hpp"

using namespace powerskel;
using namespace powerskel::conformer;

namespace {

struct Buffer {
  double *data;
  std::size_t size;
};

template <class P>
std::vector<Buffer> Buffers(P &params) {
  std::vector<Buffer> out;
  VisitTensors(params, "", [&](const std::string &, auto &t) {
    out.push_back({t.data(), static_cast<std::size_t>(t.size())});
  });
  return out;
}

/// Relative error between analytic gradients and central differences over
/// every parameter of `params`.
template <class P>
double GradientError(P &params, P &grads, const std::function<double()> &loss) {
  std::vector<double> analytic, numeric;
  auto pb = Buffers(params);
  auto gb = Buffers(grads);
  REQUIRE(pb.size() == gb.size());
  for (std::size_t i = 0; i < pb.size(); ++i) {
    REQUIRE(pb[i].size == gb[i].size);
    analytic.insert(analytic.end(), gb[i].data, gb[i].data + gb[i].size);
    const auto fd = oracle::CentralDifference(pb[i].data, pb[i].size, loss, 1e-4);
    numeric.insert(numeric.end(), fd.begin(), fd.end());
  }
  return oracle::RelativeError(analytic, numeric);
}

double Project(const Matrix &out, const Matrix &weights) {
  return out.cwiseProduct(weights).sum();
}

ConformerConfig Tiny() {
  return {.k = 8, .tokens = 2, .layers = 1, .heads = 2, .d_ff = 5, .kernel = 3};
}

BackboneParams RandomBackbone(const ConformerConfig &config, std::uint64_t seed) {
  auto p = BackboneParams::Init(config, seed);
  // Non-trivial LayerNorm, biases and offsets so every path gets exercised.
  Rng rng(seed + 100);
  VisitTensors(p, "", [&](const std::string &name, auto &t) {
    if (name.ends_with("gamma")) {
      t.array() += 0.3 * oracle::RandomMatrix(rng, t.rows(), t.cols()).array();
    } else if (name.ends_with("b") || name.ends_with("b1") || name.ends_with("b2") ||
               name.ends_with("beta") || name.ends_with("offset")) {
      t = 0.3 * oracle::RandomMatrix(rng, t.rows(), t.cols());
    }
  });
  return p;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(ConformerConfig{}.Validate());
  CHECK(ConformerConfig{}.head_dim() == 102);
  CHECK(ConformerConfig{}.width() == 51);
  CHECK_THROWS_AS((ConformerConfig{.k = 10, .tokens = 1, .heads = 3}.Validate()), Error);
  CHECK_THROWS_AS((ConformerConfig{.k = 12, .tokens = 5, .heads = 2}.Validate()), Error);
  CHECK_THROWS_AS((ConformerConfig{.k = 12, .tokens = 1, .heads = 2, .kernel = 4}.Validate()),
                  Error);
  CHECK_THROWS_AS((ConformerConfig{.k = 12, .tokens = 1, .layers = 0, .heads = 2}.Validate()),
                  Error);
}

TEST_CASE("ff_module") {
  const int w = 6;
  FeedForwardParams zero{Matrix::Zero(w, 4), Vector::Zero(4), Matrix::Zero(4, w), Vector::Zero(w)};
  Rng rng(1);
  const Matrix x = oracle::RandomMatrix(rng, 3, w);
  CHECK(FeedForward(x, zero).isZero());

  // Zero expansion: output is the contraction applied to swish(b1) plus b2.
  FeedForwardParams degenerate = zero;
  degenerate.b1 = Vector::Constant(4, 0.5);
  degenerate.w2 = Matrix::Identity(4, w);
  degenerate.b2 = Vector::Ones(w);
  const Matrix y = FeedForward(x, degenerate);
  CHECK(y.allFinite());
  CHECK((y.row(0) - y.row(2)).norm() == 0.0);

  FeedForwardParams p{oracle::RandomMatrix(rng, w, 4), oracle::RandomVector(rng, 4),
                      oracle::RandomMatrix(rng, 4, w), oracle::RandomVector(rng, w)};
  FeedForwardParams grads{Matrix::Zero(w, 4), Vector::Zero(4), Matrix::Zero(4, w),
                          Vector::Zero(w)};
  const Matrix R = oracle::RandomMatrix(rng, 3, w);
  FeedForwardTape tape;
  FeedForward(x, p, tape);
  FeedForwardBackward(tape, p, R, grads);
  CHECK(GradientError(p, grads, [&] { return Project(FeedForward(x, p), R); }) <= 1e-4);
  CHECK_THROWS_AS(FeedForward(Matrix::Zero(3, w + 1), p), Error);
}

TEST_CASE("msa_module") {
  ConformerConfig config{.k = 12, .tokens = 2, .layers = 1, .heads = 3, .d_ff = 4, .kernel = 3};
  auto params = BackboneParams::Init(config, 9);
  const auto &msa = params.blocks[0].msa;
  Rng rng(2);

  // One token: softmax over one element.
  const Matrix one = oracle::RandomMatrix(rng, 1, config.width());
  for (const auto &w : AttentionWeights(one, msa, config)) CHECK(w(0, 0) == 1.0);
  Matrix concat(1, config.k);
  for (int h = 0; h < config.heads; ++h) {
    concat.middleCols(h * config.head_dim(), config.head_dim()) = one * msa.wv[h];
  }
  CHECK((MultiHeadSelfAttention(one, msa, config) - concat * msa.wo).norm() < 1e-12);

  const Matrix seq = oracle::RandomMatrix(rng, 7, config.width());
  for (const auto &w : AttentionWeights(seq, msa, config)) {
    CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  }

  // Permutation equivariance.
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  Matrix permuted(7, config.width());
  for (int i = 0; i < 7; ++i) permuted.row(i) = seq.row(perm[i]);
  const Matrix out = MultiHeadSelfAttention(seq, msa, config);
  const Matrix out_perm = MultiHeadSelfAttention(permuted, msa, config);
  for (int i = 0; i < 7; ++i) CHECK((out_perm.row(i) - out.row(perm[i])).norm() < 1e-12);

  AttentionParams grads = ZeroBlock(config).msa;
  AttentionParams p = msa;
  const Matrix R = oracle::RandomMatrix(rng, 7, config.width());
  AttentionTape tape;
  MultiHeadSelfAttention(seq, p, config, tape);
  MultiHeadSelfAttentionBackward(tape, p, config, R, grads);
  CHECK(GradientError(p, grads, [&] {
          return Project(MultiHeadSelfAttention(seq, p, config), R);
        }) <= 1e-4);

  CHECK_THROWS_AS(
      MultiHeadSelfAttention(seq, msa, ConformerConfig{.k = 12, .tokens = 2, .heads = 5}), Error);
}

TEST_CASE("conv_module") {
  const int w = 4;
  Rng rng(3);
  const Matrix y = oracle::RandomMatrix(rng, 6, w);
  ConvParams zero{Matrix::Zero(w, 5), Vector::Zero(w)};
  CHECK(Convolution(y, zero).isZero());

  ConvParams delta = zero;
  delta.w.col(2).setOnes();
  CHECK(Convolution(y, delta) == y.cwiseMax(0.0));

  ConvParams p{oracle::RandomMatrix(rng, w, 3), oracle::RandomVector(rng, w)};
  ConvParams grads{Matrix::Zero(w, 3), Vector::Zero(w)};
  const Matrix R = oracle::RandomMatrix(rng, 6, w);
  ConvTape tape;
  Convolution(y, p, tape);
  ConvolutionBackward(tape, p, R, grads);
  CHECK(GradientError(p, grads, [&] { return Project(Convolution(y, p), R); }) <= 1e-4);

  // Same padding: edge tokens only see in-range neighbours.
  ConvParams shift = zero;
  shift.w.col(4).setOnes();  // picks token t + 2
  const Matrix shifted = Convolution(y.cwiseAbs(), shift);
  CHECK(shifted.row(5).isZero());
  CHECK(shifted.row(0) == y.cwiseAbs().row(2));
  CHECK_THROWS_AS(Convolution(Matrix::Zero(3, w + 1), p), Error);
}

TEST_CASE("conformer_block") {
  const auto config = Tiny();
  Rng rng(4);
  const Matrix x = oracle::RandomMatrix(rng, config.tokens, config.width());

  const BlockParams zero = ZeroBlock(config);
  const Matrix out = ConformerBlock(x, zero, config);
  CHECK(out.rows() == x.rows());
  CHECK(out.cols() == x.cols());
  // Independent layer norm of the input.
  for (int t = 0; t < x.rows(); ++t) {
    const double mean = x.row(t).mean();
    const double var = (x.row(t).array() - mean).square().mean();
    const Eigen::RowVectorXd ln = (x.row(t).array() - mean) / std::sqrt(var + kLayerNormEps);
    CHECK((out.row(t) - ln).norm() < 1e-12);
  }

  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto params = RandomBackbone(config, seed);
    auto &block = params.blocks[0];
    BlockParams grads = ZeroBlock(config);
    grads.norm.gamma.setZero();
    const Matrix R = oracle::RandomMatrix(rng, x.rows(), x.cols());
    BlockTape tape;
    const Matrix y = ConformerBlock(x, block, config, tape);
    CHECK(y.rows() == x.rows());
    ConformerBlockBackward(tape, block, config, R, grads);
    CHECK(GradientError(block, grads, [&] {
            return Project(ConformerBlock(x, block, config), R);
          }) <= 1e-4);
  }
}

TEST_CASE("backbone_forward") {
  const auto config = Tiny();
  Rng rng(5);
  auto params = RandomBackbone(config, 7);
  const Vector x = oracle::RandomVector(rng, config.k);

  const Vector y = BackboneForward(x, params);
  CHECK(y.size() == config.k);
  CHECK(BackboneForward(x, params) == y);
  const Matrix via_block = ConformerBlock(Embed(x, params.embed, config), params.blocks[0], config);
  CHECK((Flatten(via_block) - y).norm() == 0.0);

  // Whole-backbone gradient, parameters and input.
  BackboneParams grads = BackboneParams::Zeros(config);
  BackboneTape tape;
  BackboneForward(x, params, tape);
  const Vector R = oracle::RandomVector(rng, config.k);
  const Vector dx = BackboneBackward(tape, params, R, grads);
  auto loss = [&] { return BackboneForward(x, params).dot(R); };
  CHECK(GradientError(params, grads, loss) <= 1e-4);
  Vector xin = x;
  const auto fd = oracle::CentralDifference(
      xin.data(), config.k, [&] { return BackboneForward(xin, params).dot(R); }, 1e-4);
  CHECK(oracle::RelativeError({dx.data(), dx.data() + config.k}, fd) <= 1e-4);

  CHECK_THROWS_AS(BackboneForward(Vector::Zero(7), params), Error);
}

TEST_CASE("full-size backbone") {
  const ConformerConfig config{};  // 612 / 12 tokens / 4 layers / 6 heads / 128 / 15
  const auto params = BackboneParams::Init(config, 1);
  Rng rng(6);
  const Vector x = oracle::RandomVector(rng, 612);
  const Vector y = BackboneForward(x, params);
  CHECK(y.size() == 612);
  CHECK(y.allFinite());
  CHECK(ParameterCount(params) > 0);
  CHECK(BackboneParams::Init(config, 1).blocks[3].msa.wo == params.blocks[3].msa.wo);

  const ConformerConfig single{.k = 612, .tokens = 1, .layers = 1, .heads = 6, .d_ff = 128,
                               .kernel = 15};
  CHECK(BackboneForward(x, BackboneParams::Init(single, 2)).size() == 612);
}
