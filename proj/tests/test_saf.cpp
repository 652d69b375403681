#include <doctest.h>

#include "oracles.hpp"
#include "powerskel/error.hpp"
#include "powerskel/saf.hpp"

using namespace powerskel;
using namespace powerskel::saf;

TEST_CASE("build_dictionary") {
  const Matrix A = BuildDictionary(Vector{{1, 2, 3}});
  Matrix expected(3, 3);
  expected << 1, 3, 2,  //
      2, 1, 3,          //
      3, 2, 1;
  CHECK(A == expected);

  const Matrix c = BuildDictionary(Vector::Constant(5, 2.5));
  CHECK(c == Matrix::Constant(5, 5, 2.5));

  Rng rng(1);
  const Vector d = oracle::RandomVector(rng, 612);
  const Matrix big = BuildDictionary(d);
  REQUIRE(big.rows() == 612);
  CHECK(big.col(0) == d);
  const Vector row_sums = big.rowwise().sum();
  CHECK((row_sums.array() - d.sum()).abs().maxCoeff() < 1e-9);

  CHECK_THROWS_AS(BuildDictionary(Vector()), Error);
}

TEST_CASE("dictionary is circulant") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = rng.UniformInt(1, 40);
    const Matrix A = BuildDictionary(oracle::RandomVector(rng, k));
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) CHECK(A(i, j) == A((i + 1) % k, (j + 1) % k));
  }
}

TEST_CASE("sparse_representation") {
  SAFConfig config;
  const Vector s = SparseRepresentation(Matrix::Identity(2, 2), Vector{{5, -2}}, config);
  CHECK((s - Vector{{5, -2}}).norm() < 1e-12);
  CHECK(SparseRepresentation(Matrix::Identity(3, 3), Vector::Zero(3), config).isZero());

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = oracle::RandomMatrix(rng, 8, 8);
    const Vector d = oracle::RandomVector(rng, 8);
    const Vector got = SparseRepresentation(A, d, config);
    const Vector ref = oracle::PseudoInverseSolve(A, d);
    CHECK((A * got - d).norm() <= 1e-8 * d.norm());
    CHECK((got - ref).norm() <= 1e-6 * ref.norm());
    // Never worse than the zero code.
    CHECK((A * got - d).norm() <= d.norm());
  }

  // Rank-deficient: the minimum-norm minimiser lies in the row space.
  Matrix A = Matrix::Zero(3, 3);
  A(0, 0) = 2.0;
  A(1, 1) = 1.0;
  const Vector s_def = SparseRepresentation(A, Vector{{4, 3, 7}}, config);
  CHECK((s_def - Vector{{2, 3, 0}}).norm() < 1e-12);

  SAFConfig ridge{.solver = Solver::kRidge, .ridge_lambda = 1.0};
  const Vector r = SparseRepresentation(Matrix::Identity(2, 2), Vector{{4, -2}}, ridge);
  CHECK((r - Vector{{2, -1}}).norm() < 1e-12);

  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(SparseRepresentation(bad, Vector::Ones(2), config), Error);
  CHECK_THROWS_AS(SparseRepresentation(Matrix::Identity(2, 2), Vector::Ones(3), config), Error);
}

TEST_CASE("saf_gradient matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = rng.UniformInt(6, 12);
    const Matrix A = oracle::RandomMatrix(rng, k, k);
    Vector h = oracle::RandomVector(rng, k);
    const Vector d = oracle::RandomVector(rng, k);
    const Vector g = Gradient(A, h, d);
    auto f = [&] { return (A * h - d).squaredNorm(); };
    const auto fd = oracle::CentralDifference(h.data(), static_cast<std::size_t>(k), f, 1e-5);
    CHECK(oracle::RelativeError({g.data(), g.data() + k}, fd) <= 1e-5);
  }

  const Vector d{{1, 2, 3}};
  CHECK(Gradient(Matrix::Identity(3, 3), d, d).isZero());
  const Matrix A = oracle::RandomMatrix(rng, 5, 5);
  const Vector d5 = oracle::RandomVector(rng, 5);
  CHECK(Gradient(A, oracle::PseudoInverseSolve(A, d5), d5).norm() < 1e-8);
  CHECK_THROWS_AS(Gradient(A, Vector::Zero(4), d5), Error);
}

TEST_CASE("update_filter") {
  const SAFState s{Vector{{1, 2}}};
  CHECK(UpdateFilter(s, Vector::Zero(2), 500.0).h == s.h);
  CHECK(UpdateFilter(SAFState::Zeros(2), Vector{{1, -1}}, 0.5).h == Vector{{-0.5, 0.5}});
  CHECK_THROWS_AS(UpdateFilter(s, Vector::Zero(3), 1.0), Error);

  // Default step size on a full-size instance stays finite for one step.
  Rng rng(5);
  const Vector d = oracle::RandomVector(rng, 612).cwiseAbs() * 10.0;
  const Matrix A = BuildDictionary(d);
  const auto next = UpdateFilter(SAFState::Zeros(612), Gradient(A, Vector::Zero(612), d), 500.0);
  CHECK(next.h.allFinite());
}

TEST_CASE("reconstruct") {
  const Vector s{{1, -2, 3}};
  CHECK(Reconstruct(Matrix::Identity(3, 3), s) == s);
  CHECK(Reconstruct(Matrix::Identity(3, 3), Vector::Zero(3)).isZero());
  Rng rng(6);
  const Matrix A = oracle::RandomMatrix(rng, 6, 6);
  const Vector d = oracle::RandomVector(rng, 6);
  const Vector x = Reconstruct(A, SparseRepresentation(A, d, {}));
  CHECK((x - d).norm() <= 1e-6 * d.norm());
  CHECK_THROWS_AS(Reconstruct(A, Vector::Zero(5)), Error);
}

TEST_CASE("saf_run") {
  const auto topo = SensingTopology::WithSyntheticIds(2, 5);
  Rng rng(7);
  CsiFrame frame{0, (oracle::RandomMatrix(rng, 2, 5).array().abs() + 1.0).matrix(), 0};
  auto one = Run(std::span(&frame, 1), topo, {});
  REQUIRE(one.reconstructions.size() == 1);
  const Vector flat = Flatten(frame.values);
  CHECK((one.reconstructions[0] - flat).norm() <= 1e-6 * flat.norm());
  CHECK(one.state.h.size() == 10);

  std::vector<CsiFrame> twins{frame, frame};
  auto two = Run(twins, topo, {});
  CHECK(two.reconstructions[0] == two.reconstructions[1]);
  // Same batch, same config: bit-identical.
  auto again = Run(twins, topo, {});
  CHECK(again.reconstructions[1] == two.reconstructions[1]);
  CHECK(again.state.h == two.state.h);

  // Shared-dictionary mode reuses frame 0's dictionary for frame 1.
  std::vector<CsiFrame> pair{frame, frame};
  pair[1].values *= 2.0;
  SAFConfig shared;
  shared.shared_dictionary_from_first_sample = true;
  auto sh = Run(pair, topo, shared);
  CHECK((sh.reconstructions[1] - 2.0 * flat).norm() <= 1e-6 * flat.norm());

  const auto full = SensingTopology::WithSyntheticIds(4, 51);
  std::vector<CsiFrame> batch;
  for (int i = 0; i < 2; ++i) {
    batch.push_back({i * 33, (oracle::RandomMatrix(rng, 12, 51).array().abs() + 5.0).matrix(),
                     static_cast<std::uint32_t>(i)});
  }
  auto big = Run(batch, full, {});
  for (const auto &r : big.reconstructions) CHECK(r.size() == 612);

  CHECK_THROWS_AS(Run(std::span<const CsiFrame>(), topo, {}), Error);
}

TEST_CASE("saf_run tolerates a diverging filter") {
  const auto topo = SensingTopology::WithSyntheticIds(2, 8);
  Rng rng(8);
  std::vector<CsiFrame> batch;
  for (int i = 0; i < 60; ++i) {
    batch.push_back({i, (oracle::RandomMatrix(rng, 2, 8).array().abs() * 50.0 + 20.0).matrix(),
                     static_cast<std::uint32_t>(i)});
  }
  auto r = Run(batch, topo, {});
  CHECK(r.divergent_updates > 0);
  CHECK(r.state.h.allFinite());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector flat = Flatten(batch[i].values);
    CHECK((r.reconstructions[i] - flat).norm() <= 1e-6 * flat.norm());
  }
}
