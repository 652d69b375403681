#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "powerskel/error.hpp"
#include "powerskel/eval.hpp"

using namespace powerskel;
using namespace powerskel::eval;

namespace {

constexpr int kRs = 2;
constexpr int kLh = 11;

SkeletonFrame RandomSkeleton(Rng &rng) {
  SkeletonFrame s;
  for (auto &kp : s.keypoints) kp = {rng.Uniform(50.0, 450.0), rng.Uniform(50.0, 380.0)};
  return s;
}

Vector Jitter(Rng &rng, const SkeletonFrame &gt, double scale) {
  Vector v = LabelFromSkeleton(gt);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += scale * rng.Normal();
  return v;
}

}  // namespace

TEST_CASE("torso length") {
  SkeletonFrame s;
  s.keypoints[kRs] = {10.0, 20.0};
  s.keypoints[kLh] = {13.0, 24.0};
  CHECK(TorsoLength(s, {}) == 5.0);

  s.keypoints[kLh] = s.keypoints[kRs];
  try {
    TorsoLength(s, {});
    FAIL("expected a degenerate pose error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kDegeneratePose);
  }
}

TEST_CASE("pck basics") {
  SkeletonFrame gt;
  for (int j = 0; j < kNumKeypoints; ++j) gt.keypoints[j] = {100.0 + 5 * j, 200.0};
  gt.keypoints[kRs] = {100.0, 100.0};
  gt.keypoints[kLh] = {100.0, 200.0};  // torso 100

  const std::vector<SkeletonFrame> gts{gt};
  SUBCASE("perfect predictions") {
    const std::vector<Vector> preds{LabelFromSkeleton(gt)};
    const auto t = Pck(preds, gts);
    CHECK(t.values.isConstant(100.0, 0.0));
    CHECK(t.average.isConstant(100.0, 0.0));
    CHECK(t.evaluated == 1);
  }
  SUBCASE("threshold is inclusive") {
    Vector p = LabelFromSkeleton(gt);
    p[0] += 30.0;  // head off by 0.3 torso
    p[2] += 40.0;
    p[3] += 30.0;  // joint 1 off by exactly 0.5 torso
    const std::vector<Vector> preds{p};
    const auto t = Pck(preds, gts);
    CHECK(t.at(0, 0.2) == 0.0);
    CHECK(t.at(0, 0.3) == 100.0);
    CHECK(t.at(1, 0.4) == 0.0);
    CHECK(t.at(1, 0.5) == 100.0);
    CHECK(t.at(5, 0.1) == 100.0);
    CHECK(t.average_at(0.1) == doctest::Approx(100.0 * 15.0 / 17.0).epsilon(1e-12));
  }
  SUBCASE("translation invariance") {
    Rng rng(2);
    const Vector p = Jitter(rng, gt, 20.0);
    SkeletonFrame moved = gt;
    Vector q = p;
    for (int j = 0; j < kNumKeypoints; ++j) {
      moved.keypoints[j].x += 31.5;
      moved.keypoints[j].y -= 12.0;
      q[2 * j] += 31.5;
      q[2 * j + 1] -= 12.0;
    }
    const std::vector<Vector> ps{p}, qs{q};
    const std::vector<SkeletonFrame> ms{moved};
    CHECK(Pck(ps, gts).values == Pck(qs, ms).values);
  }
  SUBCASE("exclusions") {
    SkeletonFrame flat = gt;
    flat.keypoints[kLh] = flat.keypoints[kRs];
    SkeletonFrame hidden = gt;
    hidden.visibility[kRs] = false;
    SkeletonFrame no_head = gt;
    no_head.visibility[0] = false;
    Vector bad = LabelFromSkeleton(gt);
    bad[0] += 1000.0;
    const std::vector<Vector> preds{LabelFromSkeleton(gt), bad, bad, bad};
    const std::vector<SkeletonFrame> four{gt, flat, hidden, no_head};
    const auto t = Pck(preds, four);
    CHECK(t.evaluated == 2);
    CHECK(t.excluded_degenerate == 1);
    CHECK(t.excluded_invisible == 1);
    // The head is only counted on the first sample.
    CHECK(t.at(0, 0.1) == 100.0);

    const std::vector<Vector> one{bad};
    const std::vector<SkeletonFrame> only_flat{flat};
    try {
      Pck(one, only_flat);
      FAIL("expected an empty report");
    } catch (const Error &e) {
      CHECK(e.kind() == ErrorKind::kEmptyReport);
    }
  }
  SUBCASE("shape errors") {
    const std::vector<Vector> two{LabelFromSkeleton(gt), LabelFromSkeleton(gt)};
    CHECK_THROWS_AS(Pck(two, gts), Error);
    const std::vector<Vector> short_pred{Vector::Zero(10)};
    CHECK_THROWS_AS(Pck(short_pred, gts), Error);
    PCKConfig c;
    c.alphas = {0.2, 0.1};
    CHECK_THROWS_AS(c.Validate(), Error);
  }
}

TEST_CASE("pck against the brute-force oracle") {
  const std::vector<double> alphas{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0};
  PCKConfig config;
  config.alphas = alphas;
  for (std::uint64_t c = 0; c < 100; ++c) {
    Rng rng(1000 + c);
    const int n = static_cast<int>(rng.UniformInt(1, 40));
    std::vector<SkeletonFrame> gts;
    std::vector<Vector> preds, gt_labels;
    for (int i = 0; i < n; ++i) {
      gts.push_back(RandomSkeleton(rng));
      if (i == 0 && c % 10 == 0) gts.back().keypoints[kLh] = gts.back().keypoints[kRs];
      preds.push_back(Jitter(rng, gts.back(), rng.Uniform(1.0, 60.0)));
      gt_labels.push_back(LabelFromSkeleton(gts.back()));
    }
    if (n == 1 && c % 10 == 0) continue;
    const auto t = Pck(preds, gts, config);
    const auto oracle = oracle::BruteForcePck(preds, gt_labels, alphas, kRs, kLh);
    double max_diff = 0.0;
    for (int j = 0; j < kNumKeypoints; ++j) {
      for (std::size_t a = 0; a < alphas.size(); ++a) {
        max_diff = std::max(max_diff, std::abs(t.values(j, static_cast<Eigen::Index>(a)) - oracle[j][a]));
        if (a > 0) CHECK(t.values(j, a) >= t.values(j, a - 1));
      }
    }
    CHECK(max_diff <= 1e-9);
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      double mean = 0.0;
      for (int j = 0; j < kNumKeypoints; ++j) mean += oracle[j][a];
      CHECK(std::abs(t.average[static_cast<Eigen::Index>(a)] - mean / kNumKeypoints) <= 1e-9);
    }
  }
}

TEST_CASE("report") {
  Rng rng(8);
  std::vector<SkeletonFrame> gts;
  std::vector<Vector> preds;
  for (int i = 0; i < 30; ++i) {
    gts.push_back(RandomSkeleton(rng));
    preds.push_back(Jitter(rng, gts.back(), 25.0));
  }
  const auto t = Pck(preds, gts);
  const std::string text = Report(t);

  std::istringstream in(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 20);
  CHECK(lines[0] == "# evaluated 30 excluded_degenerate 0 excluded_invisible 0");
  CHECK(lines[1].find("PCK@10") != std::string::npos);
  CHECK(lines[1].find("PCK@50") != std::string::npos);
  CHECK(lines[2].rfind("Head", 0) == 0);
  CHECK(lines[19].rfind("Average", 0) == 0);

  const auto back = ParseReport(text);
  CHECK(back.evaluated == 30);
  CHECK(back.alphas == t.alphas);
  CHECK((back.values - t.values).cwiseAbs().maxCoeff() <= 0.005 + 1e-12);
  CHECK((back.average - t.average).cwiseAbs().maxCoeff() <= 0.005 + 1e-12);

  // Values outside [0, 100] are clamped when printed.
  PckTable odd = t;
  odd.values(0, 0) = 100.0000001;
  odd.values(1, 0) = -1e-9;
  const auto clamped = ParseReport(Report(odd));
  CHECK(clamped.values(0, 0) == 100.0);
  CHECK(clamped.values(1, 0) == 0.0);
  CHECK(Report(odd).find("-0.00") == std::string::npos);

  const auto j = PckTableFromJson(ToJson(t));
  CHECK(j.values == t.values);
  CHECK(j.average == t.average);
  CHECK(j.excluded_invisible == 0);

  CHECK_THROWS_AS(ParseReport("nonsense"), Error);
}

TEST_CASE("render") {
  Rng rng(4);
  const auto gt = RandomSkeleton(rng);
  const auto pred = SkeletonFromLabel(Jitter(rng, gt, 10.0));
  const std::string svg = RenderSvg(gt, pred, "a < b");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("width=\"512\"") != std::string::npos);
  CHECK(svg.find("height=\"424\"") != std::string::npos);
  CHECK(svg.find("a &lt; b") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}
