#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "powerskel/datamodel.hpp"

namespace powerskel::saf {

enum class Solver { kMinimumNorm, kRidge };

struct SAFConfig {
  double mu = 500.0;
  Solver solver = Solver::kMinimumNorm;
  double ridge_lambda = 0.0;
  /// Build the dictionary once from the first frame and reuse it for the
  /// whole batch instead of rebuilding it per frame.
  bool shared_dictionary_from_first_sample = false;
  /// Singular values below rcond * sigma_max are truncated in the minimum-norm solve.
  double rcond = 1e-10;

  void Validate() const;
};

nlohmann::json ToJson(const SAFConfig &config);
/// Missing fields keep the values in `base`.
SAFConfig SAFConfigFromJson(const nlohmann::json &j, SAFConfig base = {});
/// "minimum-norm" or "ridge".
Solver ParseSolver(std::string_view text);

/// Filter coefficients threaded across a batch.
struct SAFState {
  Vector h;

  static SAFState Zeros(Eigen::Index k) { return {Vector::Zero(k)}; }
};

/// Circulant dictionary: column j is d rotated down by j positions.
Matrix BuildDictionary(const Vector &d);

/// argmin_s ||A s - d||^2 (minimum-norm), or the ridge-regularised variant.
Vector SparseRepresentation(const Matrix &A, const Vector &d, const SAFConfig &config);

/// 2 A^T (A h - d)
Vector Gradient(const Matrix &A, const Vector &h, const Vector &d);

SAFState UpdateFilter(const SAFState &state, const Vector &grad, double mu);

/// x_r = A s
Vector Reconstruct(const Matrix &A, const Vector &s);

struct RunResult {
  std::vector<Vector> reconstructions;
  SAFState state;
  /// Updates skipped because they would have made h non-finite.
  std::size_t divergent_updates = 0;
};

RunResult Run(std::span<const CsiFrame> batch, const SensingTopology &topology,
              const SAFConfig &config, SAFState initial);
RunResult Run(std::span<const CsiFrame> batch, const SensingTopology &topology,
              const SAFConfig &config);

/// Runs the filter over a dataset in sample order and replaces every CSI
/// matrix with its reconstruction.
Dataset FilterDataset(const Dataset &dataset, const SAFConfig &config);

}  // namespace powerskel::saf
