#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "powerskel/error.hpp"
#include "powerskel/synth.hpp"

using namespace powerskel;
using namespace powerskel::synth;

namespace {

GeneratorConfig Small(std::size_t n_train, std::size_t n_test, std::uint64_t seed = 3) {
  GeneratorConfig c;
  c.seed = seed;
  c.n_train = n_train;
  c.n_test = n_test;
  return c;
}

double BoneLength(const SkeletonFrame &s, std::pair<int, int> bone) {
  const auto &a = s.keypoints[bone.first];
  const auto &b = s.keypoints[bone.second];
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace

TEST_CASE("generate_skeleton_sequence") {
  const auto a = GenerateSkeletonSequence(Small(300, 100));
  const auto b = GenerateSkeletonSequence(Small(300, 100));
  REQUIRE(a.size() == 400);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].timestamp_ms == b[i].timestamp_ms);
    CHECK(LabelFromSkeleton(a[i]) == LabelFromSkeleton(b[i]));
  }
  CHECK(LabelFromSkeleton(GenerateSkeletonSequence(Small(300, 100, 4))[5]) !=
        LabelFromSkeleton(a[5]));

  const auto ten = GenerateSkeletonSequence(Small(9, 1));
  const std::vector<std::int64_t> expected{0, 33, 66, 100, 133, 166, 200, 233, 266, 300};
  for (std::size_t i = 0; i < 10; ++i) CHECK(ten[i].timestamp_ms == expected[i]);

  // Bone lengths stay fixed for the whole sequence.
  for (const auto &bone : SkeletonBones()) {
    const double ref = BoneLength(a[0], bone);
    REQUIRE(ref > 1.0);
    for (const auto &frame : a) {
      CHECK(std::abs(BoneLength(frame, bone) - ref) / ref <= 1e-6);
    }
  }

  // Poses stay inside the image and actually move.
  double travel = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (const auto &kp : a[i].keypoints) {
      CHECK(kp.x > 0.0);
      CHECK(kp.x < kImageWidth);
      CHECK(kp.y > 0.0);
      CHECK(kp.y < kImageHeight);
    }
    if (i > 0) travel += (LabelFromSkeleton(a[i]) - LabelFromSkeleton(a[i - 1])).norm();
  }
  CHECK(travel > 100.0);

  auto bad = Small(0, 1);
  CHECK_THROWS_AS(GenerateSkeletonSequence(bad), Error);
}

TEST_CASE("csi_forward_model") {
  const auto poses = GenerateSkeletonSequence(Small(200, 40));
  const auto full = SensingTopology::WithSyntheticIds(4, 51);
  const auto frame = CsiForwardModel(poses[0], full, 0.0, 1);
  CHECK(frame.values.rows() == 12);
  CHECK(frame.values.cols() == 51);
  CHECK(frame.values.allFinite());
  CHECK(frame.timestamp_ms == poses[0].timestamp_ms);
  CHECK(CsiForwardModel(poses[0], full, 0.0, 99).values == frame.values);

  const auto topo = SensingTopology::WithSyntheticIds(4, 16);
  // Distinct poses (>= 10 px apart on some joint) give distinct frames.
  int distinct_pairs = 0;
  for (std::size_t i = 0; i < poses.size(); i += 7) {
    for (std::size_t j = i + 3; j < poses.size(); j += 11) {
      const double gap = (LabelFromSkeleton(poses[i]) - LabelFromSkeleton(poses[j]))
                             .cwiseAbs()
                             .maxCoeff();
      if (gap < 10.0) continue;
      ++distinct_pairs;
      const double diff = (CsiForwardModel(poses[i], topo, 0.0, 0).values -
                           CsiForwardModel(poses[j], topo, 0.0, 0).values)
                              .norm();
      CHECK(diff > 0.0);
    }
  }
  CHECK(distinct_pairs > 50);

  // Single-joint shift of 10 px also shows up.
  for (int joint = 0; joint < kNumKeypoints; ++joint) {
    auto moved = poses[10];
    moved.keypoints[joint].x += 10.0;
    CHECK((CsiForwardModel(moved, topo, 0.0, 0).values -
           CsiForwardModel(poses[10], topo, 0.0, 0).values)
              .norm() > 0.0);
  }

  // Noise level relative to the clean signal.
  const Matrix clean = CsiForwardModel(poses[3], full, 0.0, 0).values;
  const Matrix noisy = CsiForwardModel(poses[3], full, 0.1, 5).values;
  const double rms = std::sqrt(clean.squaredNorm() / clean.size());
  const double sd = std::sqrt((noisy - clean).squaredNorm() / clean.size());
  CHECK(sd == doctest::Approx(0.1 * rms).epsilon(0.1));
  CHECK(CsiForwardModel(poses[3], full, 0.1, 5).values == noisy);
  CHECK(CsiForwardModel(poses[3], full, 0.1, 6).values != noisy);
}

TEST_CASE("forward model is Lipschitz in the pose") {
  // Every entry is a sum over joints of a linear term (slope <= 2 per unit
  // of normalised coordinate) and a modulated cosine with amplitude <= 0.9,
  // amplitude slope <= 0.3 and phase slope <= 5. That bounds the
  // per-entry derivative by 6.8 / 424 per pixel.
  const auto topo = SensingTopology::WithSyntheticIds(4, 16);
  const double bound = 6.8 / kImageHeight * std::sqrt(static_cast<double>(topo.k()));
  const auto poses = GenerateSkeletonSequence(Small(90, 10));
  for (std::size_t i = 0; i < poses.size(); i += 9) {
    const Matrix base = CsiForwardModel(poses[i], topo, 0.0, 0).values;
    for (int joint = 0; joint < kNumKeypoints; ++joint) {
      for (double delta : {0.01, 1.0, 5.0}) {
        auto moved = poses[i];
        moved.keypoints[joint].y += delta;
        const double ratio = (CsiForwardModel(moved, topo, 0.0, 0).values - base).norm() / delta;
        // Values are rounded to float, allow for that at the smallest step.
        CHECK(ratio <= bound + 2e-5 * std::sqrt(topo.k()) / delta);
      }
    }
  }
}

TEST_CASE("generate_dataset") {
  const auto config = Small(100, 30);
  const auto [train, test] = GenerateDataset(config);
  CHECK(train.samples.size() == 100);
  CHECK(test.samples.size() == 30);
  CHECK(train.split == Split::kTrain);
  CHECK(test.split == Split::kTest);
  CHECK_NOTHROW(train.Validate());
  CHECK_NOTHROW(test.Validate());
  CHECK_NOTHROW(CheckDisjoint(train, test));

  const auto [train2, test2] = GenerateDataset(config);
  for (std::size_t i = 0; i < train.samples.size(); ++i) {
    CHECK(train.samples[i].csi.values == train2.samples[i].csi.values);
    CHECK(train.samples[i].label == train2.samples[i].label);
  }
  // Values survive single precision unchanged.
  for (const auto &s : test.samples) {
    CHECK(s.csi.values.cast<float>().cast<double>() == s.csi.values);
  }
  // Test frames come in contiguous blocks spread over the sequence.
  CHECK(test.samples.front().csi.timestamp_ms < train.samples.back().csi.timestamp_ms);
}

TEST_CASE("strong_augment") {
  Rng rng(11);
  const Vector x = oracle::RandomVector(rng, 612, 3.0);
  CHECK(StrongAugment(x, 0.0, 1) == x);
  CHECK(StrongAugment(x, 0.1, 1) == StrongAugment(x, 0.1, 1));
  CHECK(StrongAugment(x, 0.1, 1) != StrongAugment(x, 0.1, 2));
  CHECK(StrongAugment(x, AugmentConfig{.strong_noise_sigma = 0.0}) == x);

  const double rms = std::sqrt(x.squaredNorm() / 612.0);
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t draw = 0; draw < 1000; ++draw) {
    const Vector noise = StrongAugment(x, 0.1, DeriveSeed(42, draw)) - x;
    sum += noise.sum();
    sum_sq += noise.squaredNorm();
    n += 612;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(sd - 0.1 * rms) <= 0.2 * 0.1 * rms);
}

TEST_CASE("weak_augment") {
  const int e = 12, f = 16;
  Rng rng(12);
  const Vector x = oracle::RandomVector(rng, e * f);
  CHECK(WeakAugment(x, 0, e, f) == x);
  CHECK(WeakAugment(x, f, e, f) == x);
  for (int shift = 0; shift < f; ++shift) {
    const Vector y = WeakAugment(x, shift, e, f);
    CHECK(y.norm() == x.norm());
    CHECK(WeakAugment(y, f - shift, e, f) == x);
    // Independent index arithmetic: entry (r, c) moves to (r, c + shift mod f).
    for (int r = 0; r < e; ++r) {
      for (int c = 0; c < f; ++c) CHECK(y[r * f + (c + shift) % f] == x[r * f + c]);
    }
  }
  const Vector ramp = Vector::LinSpaced(6, 1, 6);
  CHECK(WeakAugment(ramp, 1, 2, 3) == Vector{{3, 1, 2, 6, 4, 5}});
  CHECK_THROWS_AS(WeakAugment(x, -1, e, f), Error);
  CHECK_THROWS_AS(WeakAugment(x, f + 1, e, f), Error);
  CHECK_THROWS_AS(WeakAugment(x, 1, e, f + 1), Error);

  CHECK_NOTHROW(AugmentConfig{}.Validate(16));
  CHECK_THROWS_AS(AugmentConfig{.weak_shift_max = 16}.Validate(16), Error);
}
