#include "powerskel/saf.hpp"

#include <spdlog/spdlog.h>

#include "powerskel/error.hpp"

namespace powerskel::saf {

nlohmann::json ToJson(const SAFConfig &c) {
  return {{"mu", c.mu},
          {"solver", c.solver == Solver::kRidge ? "ridge" : "minimum-norm"},
          {"ridge_lambda", c.ridge_lambda},
          {"shared_dictionary", c.shared_dictionary_from_first_sample},
          {"rcond", c.rcond}};
}

SAFConfig SAFConfigFromJson(const nlohmann::json &j, SAFConfig c) {
  c.mu = j.value("mu", c.mu);
  if (j.contains("solver")) {
    const auto s = j.at("solver").get<std::string>();
    Require(s == "ridge" || s == "minimum-norm", ErrorKind::kConfig, "unknown SAF solver '" + s + "'");
    c.solver = s == "ridge" ? Solver::kRidge : Solver::kMinimumNorm;
  }
  c.ridge_lambda = j.value("ridge_lambda", c.ridge_lambda);
  c.shared_dictionary_from_first_sample =
      j.value("shared_dictionary", c.shared_dictionary_from_first_sample);
  c.rcond = j.value("rcond", c.rcond);
  return c;
}

Solver ParseSolver(std::string_view text) {
  if (text == "minimum-norm") return Solver::kMinimumNorm;
  if (text == "ridge") return Solver::kRidge;
  Fail(ErrorKind::kConfig, "unknown SAF solver '" + std::string(text) + "'");
}

namespace {

void RequireSquare(const Matrix &A, const Vector &v, const char *what) {
  Require(A.rows() == A.cols() && A.rows() == v.size(), ErrorKind::kShape,
          std::string(what) + ": dictionary " + std::to_string(A.rows()) + "x" +
              std::to_string(A.cols()) + " vs vector " + std::to_string(v.size()));
}

}  // namespace

void SAFConfig::Validate() const {
  Require(mu > 0.0, ErrorKind::kConfig, "mu must be positive");
  Require(ridge_lambda >= 0.0, ErrorKind::kConfig, "ridge_lambda must be non-negative");
  Require(rcond > 0.0, ErrorKind::kConfig, "rcond must be positive");
}

Matrix BuildDictionary(const Vector &d) {
  const Eigen::Index k = d.size();
  Require(k >= 1, ErrorKind::kShape, "empty vector");
  Matrix A(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) A(i, j) = d[(i - j + k) % k];
  }
  return A;
}

Vector SparseRepresentation(const Matrix &A, const Vector &d, const SAFConfig &config) {
  RequireSquare(A, d, "sparse_representation");
  Require(A.allFinite() && d.allFinite(), ErrorKind::kNumeric, "non-finite dictionary or signal");
  config.Validate();

  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector &sigma = svd.singularValues();
  const Vector proj = svd.matrixU().transpose() * d;
  Vector coeff = Vector::Zero(sigma.size());
  if (config.solver == Solver::kRidge) {
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
      coeff[i] = sigma[i] * proj[i] / (sigma[i] * sigma[i] + config.ridge_lambda);
      if (!std::isfinite(coeff[i])) coeff[i] = 0.0;  // sigma == lambda == 0
    }
  } else {
    const double cutoff = sigma.size() > 0 ? config.rcond * sigma[0] : 0.0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
      if (sigma[i] > cutoff) coeff[i] = proj[i] / sigma[i];
    }
  }
  return svd.matrixV() * coeff;
}

Vector Gradient(const Matrix &A, const Vector &h, const Vector &d) {
  RequireSquare(A, h, "saf_gradient");
  Require(h.size() == d.size(), ErrorKind::kShape, "saf_gradient: h and d differ in length");
  return 2.0 * (A.transpose() * (A * h - d));
}

SAFState UpdateFilter(const SAFState &state, const Vector &grad, double mu) {
  Require(state.h.size() == grad.size(), ErrorKind::kShape, "update_filter: length mismatch");
  return {state.h - mu * grad};
}

Vector Reconstruct(const Matrix &A, const Vector &s) {
  RequireSquare(A, s, "reconstruct");
  return A * s;
}

RunResult Run(std::span<const CsiFrame> batch, const SensingTopology &topology,
              const SAFConfig &config, SAFState initial) {
  Require(!batch.empty(), ErrorKind::kShape, "saf_run: empty batch");
  config.Validate();
  Require(initial.h.size() == topology.k(), ErrorKind::kShape, "saf_run: filter length != k");

  RunResult out;
  out.state = std::move(initial);
  out.reconstructions.reserve(batch.size());
  Matrix shared;
  for (const auto &frame : batch) {
    const Vector d = Flatten(frame, topology);
    if (!config.shared_dictionary_from_first_sample || shared.size() == 0) {
      shared = BuildDictionary(d);
    }
    const Matrix &A = shared;
    const Vector s = SparseRepresentation(A, d, config);
    const Vector grad = Gradient(A, out.state.h, d);
    SAFState next = UpdateFilter(out.state, grad, config.mu);
    // The filter never feeds the reconstruction, so a blow-up is only reported
    // and the last finite coefficients are kept.
    if (next.h.allFinite()) {
      out.state = std::move(next);
    } else {
      if (out.divergent_updates == 0) {
        spdlog::info("saf: filter update diverged at frame seq {} (mu={}); keeping last finite h",
                     frame.sequence_no, config.mu);
      }
      ++out.divergent_updates;
    }
    out.reconstructions.push_back(Reconstruct(A, s));
  }
  return out;
}

RunResult Run(std::span<const CsiFrame> batch, const SensingTopology &topology,
              const SAFConfig &config) {
  return Run(batch, topology, config, SAFState::Zeros(topology.k()));
}

Dataset FilterDataset(const Dataset &dataset, const SAFConfig &config) {
  Dataset out = dataset;
  if (dataset.samples.empty()) return out;
  std::vector<CsiFrame> frames;
  frames.reserve(dataset.samples.size());
  for (const auto &s : dataset.samples) frames.push_back(s.csi);
  auto result = Run(frames, dataset.topology, config);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i].csi.values =
        Unflatten(result.reconstructions[i], dataset.topology.e(), dataset.topology.f());
  }
  return out;
}

}  // namespace powerskel::saf
