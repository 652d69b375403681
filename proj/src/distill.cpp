#include "powerskel/distill.hpp"

#include <cmath>

#include "powerskel/error.hpp"

namespace powerskel::distill {

void SinkhornConfig::Validate() const {
  Require(epsilon > 0.0, ErrorKind::kConfig, "epsilon must be positive");
  Require(t >= 1, ErrorKind::kConfig, "t must be positive");
  Require(niter >= 1, ErrorKind::kConfig, "niter must be >= 1");
  Require(thresh > 0.0, ErrorKind::kConfig, "thresh must be positive");
}

void LossWeights::Validate() const {
  Require(beta >= 0.0 && beta <= 1.0, ErrorKind::kConfig, "beta must lie in [0, 1]");
}

Matrix CostMatrix(const Vector &output, const Vector &target) {
  Require(output.size() == target.size(), ErrorKind::kShape,
          "cost_matrix: lengths " + std::to_string(output.size()) + " and " +
              std::to_string(target.size()));
  const Eigen::Index t = output.size();
  Matrix C(t, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    for (Eigen::Index i = 0; i < t; ++i) {
      const double diff = output[i] - target[j];
      C(i, j) = diff * diff;
    }
  }
  return C;
}

namespace {

constexpr double kSafeExponent = 200.0;

// M_ij = (-C_ij + u_i + v_j) / eps
Matrix Scaled(const Matrix &C, const Vector &u, const Vector &v, double eps) {
  Matrix M = -C;
  M.colwise() += u;
  M.rowwise() += v.transpose();
  return M / eps;
}

Vector RowLse(const Matrix &M) {
  Vector out(M.rows());
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const double mx = M.row(i).maxCoeff();
    out[i] = mx + std::log((M.row(i).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace

SinkhornResult SinkhornLoss(const Vector &output, const Vector &target,
                            const SinkhornConfig &config) {
  config.Validate();
  Require(output.size() == config.t && target.size() == config.t, ErrorKind::kShape,
          "sinkhorn: inputs must have length t=" + std::to_string(config.t));
  Require(output.allFinite() && target.allFinite(), ErrorKind::kNumeric,
          "sinkhorn: non-finite input");

  const double eps = config.epsilon;
  const double log_marginal = -std::log(static_cast<double>(config.t));
  SinkhornResult r;
  r.cost = CostMatrix(output, target);
  r.u = Vector::Zero(config.t);
  r.v = Vector::Zero(config.t);

  auto check = [&](int iter) {
    if (!std::isfinite(r.final_err) || !r.v.allFinite()) {
      Fail(ErrorKind::kNumeric, "sinkhorn: non-finite state at iteration " + std::to_string(iter));
    }
  };

  // Every row and column keeps an entry within kSafeExponent of the maximum,
  // so the kernel form stays in range and gives the same iterates.
  const double worst = std::max(r.cost.rowwise().minCoeff().maxCoeff(),
                                r.cost.colwise().minCoeff().maxCoeff()) / eps;
  if (worst < kSafeExponent) {
    const Matrix K = (-r.cost / eps).array().exp().matrix();
    const double marginal = std::exp(log_marginal);
    Vector b = Vector::Ones(config.t);
    Vector a(config.t);
    for (int iter = 0; iter < config.niter; ++iter) {
      const Vector u_prev = r.u;
      a = marginal / (K * b).array();
      b = marginal / (K.transpose() * a).array();
      r.u = eps * a.array().log();
      r.v = eps * b.array().log();
      r.final_err = (r.u - u_prev).cwiseAbs().sum();
      r.iterations = iter + 1;
      check(iter);
      if (r.final_err < config.thresh) {
        r.converged = true;
        break;
      }
    }
    r.plan = a.asDiagonal() * K * b.asDiagonal();
  } else {
    for (int iter = 0; iter < config.niter; ++iter) {
      const Vector u_prev = r.u;
      r.u = (eps * (log_marginal - RowLse(Scaled(r.cost, r.u, r.v, eps)).array())).matrix() + r.u;
      r.v = (eps * (log_marginal - RowLse(Scaled(r.cost, r.u, r.v, eps).transpose()).array()))
                .matrix() +
            r.v;
      r.final_err = (r.u - u_prev).cwiseAbs().sum();
      r.iterations = iter + 1;
      check(iter);
      if (r.final_err < config.thresh) {
        r.converged = true;
        break;
      }
    }
    r.plan = Scaled(r.cost, r.u, r.v, eps).array().exp().matrix();
  }
  r.loss = (r.plan.array() * r.cost.array()).sum();
  Require(std::isfinite(r.loss), ErrorKind::kNumeric, "sinkhorn: non-finite loss");
  return r;
}

Vector SinkhornGradient(const SinkhornResult &result, const Vector &output, const Vector &target) {
  Require(result.plan.rows() == output.size() && output.size() == target.size(), ErrorKind::kShape,
          "sinkhorn_gradient: shape mismatch");
  // d/dO_i sum_j z_ij (O_i - T_j)^2 = 2 sum_j z_ij (O_i - T_j)
  const Vector row_mass = result.plan.rowwise().sum();
  return 2.0 * (row_mass.cwiseProduct(output) - result.plan * target);
}

Vector SoftTarget(std::span<const Vector> student_outputs) {
  Require(!student_outputs.empty(), ErrorKind::kShape, "soft_target: no outputs");
  Vector sum = Vector::Zero(student_outputs.front().size());
  for (const auto &o : student_outputs) {
    Require(o.size() == sum.size(), ErrorKind::kShape, "soft_target: length mismatch");
    sum += o;
  }
  return sum / static_cast<double>(student_outputs.size());
}

double DataLoss(const Vector &pred, const Vector &label) {
  Require(pred.size() == label.size() && pred.size() > 0, ErrorKind::kShape,
          "data_loss: length mismatch");
  return (pred - label).cwiseAbs().mean();
}

Vector DataLossGradient(const Vector &pred, const Vector &label) {
  Require(pred.size() == label.size() && pred.size() > 0, ErrorKind::kShape,
          "data_loss: length mismatch");
  return (pred - label).unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }) /
         static_cast<double>(pred.size());
}

double TotalLoss(double data_loss, double ot_loss, const LossWeights &weights) {
  weights.Validate();
  return weights.beta * data_loss + (1.0 - weights.beta) * ot_loss;
}

}  // namespace powerskel::distill
