#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "powerskel/conformer.hpp"
#include "powerskel/distill.hpp"
#include "powerskel/saf.hpp"
#include "powerskel/synth.hpp"

namespace powerskel::ckd {

using conformer::BackboneParams;
using conformer::ConformerConfig;

/// Regression head: k -> hidden -> hidden -> 34, ReLU after the first two layers.
struct HeadParams {
  Matrix w1;  // k x hidden
  Vector b1;
  Matrix w2;  // hidden x hidden
  Vector b2;
  Matrix w3;  // hidden x 34
  Vector b3;

  static HeadParams Zeros(int k, int hidden);
  static HeadParams Init(int k, int hidden, std::uint64_t seed);
};

template <class P, class Fn>
  requires conformer::ParamsOf<P, HeadParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  fn(prefix + "w1", p.w1);
  fn(prefix + "b1", p.b1);
  fn(prefix + "w2", p.w2);
  fn(prefix + "b2", p.b2);
  fn(prefix + "w3", p.w3);
  fn(prefix + "b3", p.b3);
}

/// Fixed input standardisation, fitted once on the training split.
struct Normalizer {
  Vector mean;   // k
  Vector scale;  // k, strictly positive

  static Normalizer Identity(int k);
  Vector Apply(const Vector &x) const { return (x - mean).cwiseQuotient(scale); }
};

/// Per-path statistics pooled over subcarriers, so cyclic subcarrier shifts
/// commute with the normalisation.
Normalizer FitNormalizer(const Dataset &dataset);

/// Labels are regressed in image-fraction units (x / 512, y / 424).
Vector NormalizeLabel(const Vector &label);
Vector DenormalizeLabel(const Vector &normalized);

struct ModelConfig {
  ConformerConfig backbone;
  int hidden = 128;
  int students = 2;  // S
  bool shared_backbone = true;

  void Validate() const;
};

struct CKDformerParams {
  ModelConfig config;
  /// One entry when shared, S entries otherwise.
  std::vector<BackboneParams> backbones;
  std::vector<HeadParams> heads;
  Normalizer normalizer;
  /// Inputs are passed through SAF (with saf_config) before normalisation.
  bool use_saf = false;
  saf::SAFConfig saf_config;

  int students() const { return static_cast<int>(heads.size()); }
  BackboneParams &backbone_for(int student);
  const BackboneParams &backbone_for(int student) const;

  static CKDformerParams Init(const ModelConfig &config, std::uint64_t seed);
  /// Same shapes, every entry zero; used for gradient accumulation.
  static CKDformerParams ZerosLike(const CKDformerParams &params);
};

template <class P, class Fn>
  requires conformer::ParamsOf<P, CKDformerParams>
void VisitTensors(P &p, const std::string &prefix, Fn &&fn) {
  for (std::size_t i = 0; i < p.backbones.size(); ++i) {
    conformer::VisitTensors(p.backbones[i], prefix + "backbone" + std::to_string(i) + ".", fn);
  }
  for (std::size_t s = 0; s < p.heads.size(); ++s) {
    VisitTensors(p.heads[s], prefix + "head" + std::to_string(s) + ".", fn);
  }
}

/// Total trainable scalars; a shared backbone counts once.
std::int64_t ParameterCount(const CKDformerParams &params);
std::int64_t ParameterCount(const HeadParams &head);

// ---- forward / backward -------------------------------------------------

struct HeadTape {
  Vector z, h1, h2;
};
Vector HeadForward(const Vector &z, const HeadParams &p);
Vector HeadForward(const Vector &z, const HeadParams &p, HeadTape &tape);
/// Accumulates into grads, returns d/dz.
Vector HeadBackward(const HeadTape &tape, const HeadParams &p, const Vector &d_out,
                    HeadParams &grads);

/// Raw model output for an already normalised input (normalised label units).
Vector StudentForwardNormalized(const Vector &x_normalized, const CKDformerParams &params,
                                int student);
/// Backbone then the indexed head, on a raw (pre-normalisation) k-vector;
/// returns a 34-vector in pixels.
Vector StudentForward(const Vector &x, const CKDformerParams &params, int student);
/// Inference output: the soft target over all students, or one student when
/// `student` >= 0. Pixel units.
Vector Predict(const Vector &x, const CKDformerParams &params, int student = -1);

struct StepOptions {
  synth::AugmentConfig augment;
  distill::SinkhornConfig sinkhorn;
  distill::LossWeights weights;
  /// false: every student sees the clean input and trains on the data loss only.
  bool use_ckd = true;
};

struct StudentLosses {
  double data = 0.0;   // L_d
  double ot = 0.0;     // L_OT
  double total = 0.0;  // L_T
};

struct StepResult {
  std::vector<StudentLosses> losses;  // batch means, one per student
  CKDformerParams grads;              // gradient of sum_s mean_i L_T(s, i)
  int sinkhorn_unconverged = 0;
};

/// Student s receives the strong view when s is even and the weak view when
/// odd; view randomness comes from DeriveSeed(seed, ...) per sample/student.
/// Inputs in the batch are raw CSI (after SAF when enabled).
StepResult CkdStep(std::span<const Sample> batch, const CKDformerParams &params,
                   const StepOptions &options, std::uint64_t seed);

/// The augmented raw input student `student` sees for `x`.
Vector StudentView(const Vector &x, int student, const StepOptions &options, int rows, int cols,
                   std::uint64_t seed);

}  // namespace powerskel::ckd
