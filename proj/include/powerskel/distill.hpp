#pragma once

#include <span>

#include "powerskel/datamodel.hpp"

namespace powerskel::distill {

/// Entropic OT solver settings. Both marginals are uniform with weight 1/t.
struct SinkhornConfig {
  double epsilon = 0.01;
  int t = kLabelDim;
  int niter = 100;
  double thresh = 1e-6;

  void Validate() const;
};

struct LossWeights {
  double beta = 0.5;  // weight of the data loss

  void Validate() const;
};

/// C_ij = |O_i - Ohat_j|^2
Matrix CostMatrix(const Vector &output, const Vector &target);

struct SinkhornResult {
  double loss = 0.0;  // sum_ij z_ij C_ij
  Matrix plan;        // z
  Matrix cost;        // C
  Vector u;
  Vector v;
  int iterations = 0;
  double final_err = 0.0;
  bool converged = false;
};

/// Log-domain Sinkhorn iteration on the squared-distance cost between the
/// entries of `output` and `target`.
SinkhornResult SinkhornLoss(const Vector &output, const Vector &target,
                            const SinkhornConfig &config);

/// d L_OT / d output with the plan held fixed (target treated as a constant).
Vector SinkhornGradient(const SinkhornResult &result, const Vector &output, const Vector &target);

/// Elementwise mean of the student outputs.
Vector SoftTarget(std::span<const Vector> student_outputs);

/// Mean absolute error.
double DataLoss(const Vector &pred, const Vector &label);
/// Subgradient of DataLoss w.r.t. pred (sign(pred - label) / t, 0 at ties).
Vector DataLossGradient(const Vector &pred, const Vector &label);

/// beta * L_d + (1 - beta) * L_OT
double TotalLoss(double data_loss, double ot_loss, const LossWeights &weights);

}  // namespace powerskel::distill
