#include "powerskel/ckdformer.hpp"

#include <cmath>

#include "powerskel/error.hpp"
#include "powerskel/random.hpp"

namespace powerskel::ckd {

namespace {

void FillUniform(Matrix &m, Rng &rng, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.Uniform(-bound, bound);
}

void CheckStudent(const CKDformerParams &params, int student) {
  Require(student >= 0 && student < params.students(), ErrorKind::kIndex,
          "student index " + std::to_string(student) + " outside [0, " +
              std::to_string(params.students()) + ")");
}

}  // namespace

HeadParams HeadParams::Zeros(int k, int hidden) {
  return {Matrix::Zero(k, hidden),      Vector::Zero(hidden), Matrix::Zero(hidden, hidden),
          Vector::Zero(hidden),         Matrix::Zero(hidden, kLabelDim),
          Vector::Zero(kLabelDim)};
}

HeadParams HeadParams::Init(int k, int hidden, std::uint64_t seed) {
  HeadParams p = Zeros(k, hidden);
  Rng rng(seed);
  FillUniform(p.w1, rng, k);
  FillUniform(p.w2, rng, hidden);
  FillUniform(p.w3, rng, hidden);
  return p;
}

Normalizer Normalizer::Identity(int k) { return {Vector::Zero(k), Vector::Ones(k)}; }

Normalizer FitNormalizer(const Dataset &dataset) {
  const int e = dataset.topology.e();
  const int f = dataset.topology.f();
  Require(!dataset.samples.empty(), ErrorKind::kShape, "cannot fit a normalizer on no samples");
  Vector sum = Vector::Zero(e), sum_sq = Vector::Zero(e);
  for (const auto &s : dataset.samples) {
    sum += s.csi.values.rowwise().sum();
    sum_sq += s.csi.values.array().square().matrix().rowwise().sum();
  }
  const double n = static_cast<double>(dataset.samples.size()) * f;
  Normalizer out{Vector(e * f), Vector(e * f)};
  for (int p = 0; p < e; ++p) {
    const double mean = sum[p] / n;
    const double var = std::max(sum_sq[p] / n - mean * mean, 0.0);
    const double scale = var > 1e-12 ? std::sqrt(var) : 1.0;
    out.mean.segment(p * f, f).setConstant(mean);
    out.scale.segment(p * f, f).setConstant(scale);
  }
  return out;
}

Vector NormalizeLabel(const Vector &label) {
  Require(label.size() == kLabelDim, ErrorKind::kShape, "label must have 34 entries");
  Vector out = label;
  for (int j = 0; j < kNumKeypoints; ++j) {
    out[2 * j] /= kImageWidth;
    out[2 * j + 1] /= kImageHeight;
  }
  return out;
}

Vector DenormalizeLabel(const Vector &normalized) {
  Require(normalized.size() == kLabelDim, ErrorKind::kShape, "label must have 34 entries");
  Vector out = normalized;
  for (int j = 0; j < kNumKeypoints; ++j) {
    out[2 * j] *= kImageWidth;
    out[2 * j + 1] *= kImageHeight;
  }
  return out;
}

void ModelConfig::Validate() const {
  backbone.Validate();
  Require(hidden >= 1, ErrorKind::kConfig, "head hidden width must be >= 1");
  Require(students >= 1, ErrorKind::kConfig, "at least one student required");
}

BackboneParams &CKDformerParams::backbone_for(int student) {
  return backbones[config.shared_backbone ? 0 : static_cast<std::size_t>(student)];
}

const BackboneParams &CKDformerParams::backbone_for(int student) const {
  return backbones[config.shared_backbone ? 0 : static_cast<std::size_t>(student)];
}

CKDformerParams CKDformerParams::Init(const ModelConfig &config, std::uint64_t seed) {
  config.Validate();
  CKDformerParams p;
  p.config = config;
  const int n_backbones = config.shared_backbone ? 1 : config.students;
  for (int b = 0; b < n_backbones; ++b) {
    p.backbones.push_back(BackboneParams::Init(config.backbone, DeriveSeed(seed, 10 + b)));
  }
  for (int s = 0; s < config.students; ++s) {
    p.heads.push_back(HeadParams::Init(config.backbone.k, config.hidden, DeriveSeed(seed, 100 + s)));
  }
  p.normalizer = Normalizer::Identity(config.backbone.k);
  return p;
}

CKDformerParams CKDformerParams::ZerosLike(const CKDformerParams &params) {
  CKDformerParams out = params;
  VisitTensors(out, "", [](const std::string &, auto &t) { t.setZero(); });
  return out;
}

std::int64_t ParameterCount(const HeadParams &head) {
  std::int64_t n = 0;
  VisitTensors(head, "", [&](const std::string &, const auto &t) { n += t.size(); });
  return n;
}

std::int64_t ParameterCount(const CKDformerParams &params) {
  std::int64_t n = 0;
  VisitTensors(params, "", [&](const std::string &, const auto &t) { n += t.size(); });
  return n;
}

Vector HeadForward(const Vector &z, const HeadParams &p, HeadTape &tape) {
  Require(z.size() == p.w1.rows(), ErrorKind::kShape, "head input width mismatch");
  tape.z = z;
  tape.h1 = (p.w1.transpose() * z + p.b1).cwiseMax(0.0);
  tape.h2 = (p.w2.transpose() * tape.h1 + p.b2).cwiseMax(0.0);
  return p.w3.transpose() * tape.h2 + p.b3;
}

Vector HeadForward(const Vector &z, const HeadParams &p) {
  HeadTape tape;
  return HeadForward(z, p, tape);
}

Vector HeadBackward(const HeadTape &tape, const HeadParams &p, const Vector &d_out,
                    HeadParams &grads) {
  grads.w3.noalias() += tape.h2 * d_out.transpose();
  grads.b3 += d_out;
  Vector d_h2 = p.w3 * d_out;
  d_h2 = (tape.h2.array() > 0.0).select(d_h2, 0.0);
  grads.w2.noalias() += tape.h1 * d_h2.transpose();
  grads.b2 += d_h2;
  Vector d_h1 = p.w2 * d_h2;
  d_h1 = (tape.h1.array() > 0.0).select(d_h1, 0.0);
  grads.w1.noalias() += tape.z * d_h1.transpose();
  grads.b1 += d_h1;
  return p.w1 * d_h1;
}

Vector StudentForwardNormalized(const Vector &x_normalized, const CKDformerParams &params,
                                int student) {
  CheckStudent(params, student);
  return HeadForward(conformer::BackboneForward(x_normalized, params.backbone_for(student)),
                     params.heads[static_cast<std::size_t>(student)]);
}

Vector StudentForward(const Vector &x, const CKDformerParams &params, int student) {
  Require(x.size() == params.normalizer.mean.size(), ErrorKind::kShape,
          "input length " + std::to_string(x.size()) + " does not match model k " +
              std::to_string(params.normalizer.mean.size()));
  return DenormalizeLabel(StudentForwardNormalized(params.normalizer.Apply(x), params, student));
}

Vector Predict(const Vector &x, const CKDformerParams &params, int student) {
  if (student >= 0) return StudentForward(x, params, student);
  Require(x.size() == params.normalizer.mean.size(), ErrorKind::kShape,
          "input length does not match model k");
  const Vector xn = params.normalizer.Apply(x);
  Vector sum = Vector::Zero(kLabelDim);
  for (int s = 0; s < params.students(); ++s) sum += StudentForwardNormalized(xn, params, s);
  return DenormalizeLabel(sum / params.students());
}

Vector StudentView(const Vector &x, int student, const StepOptions &options, int rows, int cols,
                   std::uint64_t seed) {
  if (student % 2 == 0) {
    return synth::StrongAugment(x, options.augment.strong_noise_sigma, seed);
  }
  Rng rng(seed);
  const int max_shift = options.augment.weak_shift_max;
  if (max_shift < 1) return x;
  // Pan by 1..max_shift positions, left or right.
  const auto amount = static_cast<int>(rng.UniformInt(1, max_shift));
  const int shift = rng.Uniform() < 0.5 ? amount : cols - amount;
  return synth::WeakAugment(x, shift, rows, cols);
}

StepResult CkdStep(std::span<const Sample> batch, const CKDformerParams &params,
                   const StepOptions &options, std::uint64_t seed) {
  Require(!batch.empty(), ErrorKind::kShape, "empty batch");
  options.weights.Validate();
  const int S = params.students();
  const bool distill = options.use_ckd && S >= 2;
  const double beta = distill ? options.weights.beta : 1.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  StepResult result;
  result.losses.assign(static_cast<std::size_t>(S), {});
  result.grads = CKDformerParams::ZerosLike(params);

  std::vector<conformer::BackboneTape> backbone_tapes(static_cast<std::size_t>(S));
  std::vector<HeadTape> head_tapes(static_cast<std::size_t>(S));
  std::vector<Vector> outputs(static_cast<std::size_t>(S));

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample &sample = batch[i];
    const int rows = static_cast<int>(sample.csi.values.rows());
    const int cols = static_cast<int>(sample.csi.values.cols());
    const Vector x = Flatten(sample.csi.values);
    Require(x.size() == params.normalizer.mean.size(), ErrorKind::kShape,
            "sample CSI length does not match model k");
    const Vector label = NormalizeLabel(sample.label);
    const std::uint64_t sample_seed = DeriveSeed(seed, i);

    for (int s = 0; s < S; ++s) {
      const auto si = static_cast<std::size_t>(s);
      const Vector view = distill ? StudentView(x, s, options, rows, cols, DeriveSeed(sample_seed, si))
                                  : x;
      const Vector z = conformer::BackboneForward(params.normalizer.Apply(view),
                                                  params.backbone_for(s), backbone_tapes[si]);
      outputs[si] = HeadForward(z, params.heads[si], head_tapes[si]);
    }

    const Vector target = distill ? distill::SoftTarget(outputs) : Vector();
    for (int s = 0; s < S; ++s) {
      const auto si = static_cast<std::size_t>(s);
      const Vector &out = outputs[si];
      const double ld = distill::DataLoss(out, label);
      Vector d_out = beta * distill::DataLossGradient(out, label);
      double lot = 0.0;
      if (distill) {
        const auto ot = distill::SinkhornLoss(out, target, options.sinkhorn);
        lot = ot.loss;
        if (!ot.converged) ++result.sinkhorn_unconverged;
        d_out += (1.0 - beta) * distill::SinkhornGradient(ot, out, target);
      }
      const double lt = distill ? distill::TotalLoss(ld, lot, options.weights) : ld;
      auto &acc = result.losses[si];
      acc.data += ld * inv_b;
      acc.ot += lot * inv_b;
      acc.total += lt * inv_b;

      d_out *= inv_b;
      const Vector dz = HeadBackward(head_tapes[si], params.heads[si], d_out, result.grads.heads[si]);
      conformer::BackboneBackward(backbone_tapes[si], params.backbone_for(s), dz,
                                  result.grads.backbone_for(s));
    }
  }
  return result;
}

}  // namespace powerskel::ckd
