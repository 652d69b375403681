#include "powerskel/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "powerskel/error.hpp"
#include "powerskel/random.hpp"

namespace powerskel::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFloorY = 380.0;
constexpr std::size_t kSplitBlock = 16;
// Fixed seed for the simulated propagation environment, shared by all datasets.
constexpr std::uint64_t kEnvironmentSeed = 0xC5100F0ULL;

struct Vec2 {
  double x, y;
  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
};

/// Joint angles for one frame; angles are radians away from hanging straight down.
struct Pose {
  double lean = 0.0;
  double right_shoulder = 0.15, right_elbow = 0.0;
  double left_shoulder = 0.15, left_elbow = 0.0;
  double hip = 0.08, knee = 0.0;
  double root_x = 256.0;
};

struct Body {
  double spine_low = 30, spine_mid = 30, spine_high = 22, neck = 28;
  double shoulder_half = 40, hip_half = 24;
  double upper_arm = 52, forearm = 48;
  double thigh = 68, shin = 62;
};

Body ScaledBody(double s) {
  Body b;
  for (double *v : {&b.spine_low, &b.spine_mid, &b.spine_high, &b.neck, &b.shoulder_half,
                    &b.hip_half, &b.upper_arm, &b.forearm, &b.thigh, &b.shin}) {
    *v *= s;
  }
  return b;
}

SkeletonFrame Kinematics(const Body &b, const Pose &p, std::int64_t timestamp_ms) {
  const Vec2 up{std::sin(p.lean), -std::cos(p.lean)};
  const Vec2 side{std::cos(p.lean), std::sin(p.lean)};  // towards image right
  std::array<Vec2, kNumKeypoints> j{};
  auto at = [&](Joint joint) -> Vec2 & { return j[static_cast<int>(joint)]; };

  at(Joint::kSacrum) = {0.0, 0.0};
  at(Joint::kAbdomen) = at(Joint::kSacrum) + up * b.spine_low;
  at(Joint::kChest) = at(Joint::kAbdomen) + up * b.spine_mid;
  at(Joint::kNeck) = at(Joint::kChest) + up * b.spine_high;
  at(Joint::kHead) = at(Joint::kNeck) + up * b.neck;

  // The subject faces the camera, so their right side is on the image left.
  at(Joint::kRightShoulder) = at(Joint::kNeck) - side * b.shoulder_half;
  at(Joint::kLeftShoulder) = at(Joint::kNeck) + side * b.shoulder_half;
  auto limb = [](double angle, double sign) { return Vec2{sign * std::sin(angle), std::cos(angle)}; };
  at(Joint::kRightElbow) = at(Joint::kRightShoulder) + limb(p.right_shoulder, -1) * b.upper_arm;
  at(Joint::kRightWrist) =
      at(Joint::kRightElbow) + limb(p.right_shoulder + p.right_elbow, -1) * b.forearm;
  at(Joint::kLeftElbow) = at(Joint::kLeftShoulder) + limb(p.left_shoulder, 1) * b.upper_arm;
  at(Joint::kLeftWrist) =
      at(Joint::kLeftElbow) + limb(p.left_shoulder + p.left_elbow, 1) * b.forearm;

  at(Joint::kRightHip) = at(Joint::kSacrum) - side * b.hip_half;
  at(Joint::kLeftHip) = at(Joint::kSacrum) + side * b.hip_half;
  at(Joint::kRightKnee) = at(Joint::kRightHip) + limb(p.hip, -1) * b.thigh;
  at(Joint::kRightAnkle) = at(Joint::kRightKnee) + limb(p.hip - p.knee, -1) * b.shin;
  at(Joint::kLeftKnee) = at(Joint::kLeftHip) + limb(p.hip, 1) * b.thigh;
  at(Joint::kLeftAnkle) = at(Joint::kLeftKnee) + limb(p.hip - p.knee, 1) * b.shin;

  // Feet on the floor, body centred at root_x.
  const double ankle_y = std::max(at(Joint::kRightAnkle).y, at(Joint::kLeftAnkle).y);
  const Vec2 offset{p.root_x, kFloorY - ankle_y};
  SkeletonFrame out;
  out.timestamp_ms = timestamp_ms;
  for (int i = 0; i < kNumKeypoints; ++i) {
    const Vec2 q = j[i] + offset;
    out.keypoints[i] = {q.x, q.y};
  }
  return out;
}

Pose TemplatePose(Motion motion, double phase, double amplitude) {
  Pose p;
  const double wave = 0.5 * (1.0 - std::cos(phase));  // 0 -> 1 -> 0 over one cycle
  switch (motion) {
    case Motion::kReachUp:
      p.right_shoulder = p.left_shoulder = 0.15 + amplitude * (kPi - 0.45) * wave;
      p.right_elbow = p.left_elbow = 0.3 * std::sin(phase);
      break;
    case Motion::kSwingArm: {
      const double s = 0.5 * (1.0 + std::sin(phase));
      p.right_shoulder = 0.3 + amplitude * 1.2 * s;
      p.right_elbow = 0.6 * s;
      p.left_shoulder = 0.2 + 0.3 * (1.0 - s);
      p.lean = 0.08 * std::sin(phase);
      break;
    }
    case Motion::kSquat:
      p.hip = 0.08 + 0.6 * amplitude * wave;
      p.knee = 1.1 * amplitude * wave;
      p.right_shoulder = p.left_shoulder = 0.2 + 0.8 * amplitude * wave;
      break;
  }
  return p;
}

double Rms(const Matrix &m) { return std::sqrt(m.squaredNorm() / static_cast<double>(m.size())); }

}  // namespace

std::string_view ToString(Motion motion) {
  switch (motion) {
    case Motion::kReachUp: return "reach-up";
    case Motion::kSwingArm: return "swing-arm";
    case Motion::kSquat: return "squat";
  }
  return "unknown";
}

Motion ParseMotion(std::string_view text) {
  for (auto m : {Motion::kReachUp, Motion::kSwingArm, Motion::kSquat}) {
    if (ToString(m) == text) return m;
  }
  Fail(ErrorKind::kConfig, "unknown motion '" + std::string(text) + "'");
}

void GeneratorConfig::Validate() const {
  Require(n_train >= 1 && n_test >= 1, ErrorKind::kConfig, "n_train and n_test must be >= 1");
  Require(noise_sigma >= 0.0, ErrorKind::kConfig, "noise_sigma must be non-negative");
  Require(subcarrier_drift >= 0 && subcarrier_drift < topology.f(), ErrorKind::kConfig,
          "subcarrier_drift must lie in [0, f)");
  Require(!motions.empty(), ErrorKind::kConfig, "at least one motion template required");
}

nlohmann::json ToJson(const GeneratorConfig &config) {
  std::vector<std::string> motions;
  for (auto m : config.motions) motions.emplace_back(ToString(m));
  return {{"seed", config.seed},
          {"n_train", config.n_train},
          {"n_test", config.n_test},
          {"m", config.topology.m()},
          {"f", config.topology.f()},
          {"sensor_ids", config.topology.sensor_ids()},
          {"noise_sigma", config.noise_sigma},
          {"subcarrier_drift", config.subcarrier_drift},
          {"motions", motions}};
}

GeneratorConfig GeneratorConfigFromJson(const nlohmann::json &j) {
  GeneratorConfig c;
  c.seed = j.value("seed", c.seed);
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.subcarrier_drift = j.value("subcarrier_drift", c.subcarrier_drift);
  if (j.contains("sensor_ids")) {
    c.topology = SensingTopology(j.at("sensor_ids").get<std::vector<std::string>>(),
                                 j.value("f", c.topology.f()));
  } else if (j.contains("m") || j.contains("f")) {
    c.topology = SensingTopology::WithSyntheticIds(j.value("m", 4), j.value("f", 16));
  }
  if (j.contains("motions")) {
    c.motions.clear();
    for (const auto &m : j.at("motions")) c.motions.push_back(ParseMotion(m.get<std::string>()));
  }
  return c;
}

std::vector<SkeletonFrame> GenerateSkeletonSequence(const GeneratorConfig &config) {
  config.Validate();
  Rng rng(DeriveSeed(config.seed, 1));
  const Body body = ScaledBody(rng.Uniform(0.85, 1.15));

  std::vector<SkeletonFrame> out;
  out.reserve(config.frames());
  std::size_t remaining = 0;
  Motion motion = config.motions.front();
  double phase = 0.0, speed = 0.0, amplitude = 1.0, centre = 256.0, drift = 0.0;
  for (std::size_t i = 0; i < config.frames(); ++i) {
    if (remaining == 0) {
      // New episode: template, duration, tempo, extent and standing position.
      motion = config.motions[static_cast<std::size_t>(
          rng.UniformInt(0, static_cast<std::int64_t>(config.motions.size()) - 1))];
      remaining = static_cast<std::size_t>(rng.UniformInt(60, 120));
      speed = 2.0 * kPi * rng.Uniform(1.0, 2.0) / static_cast<double>(remaining);
      amplitude = rng.Uniform(0.7, 1.0);
      centre = rng.Uniform(220.0, 292.0);
      drift = rng.Uniform(-0.3, 0.3);
      phase = rng.Uniform(0.0, 2.0 * kPi);
    }
    Pose pose = TemplatePose(motion, phase, amplitude);
    pose.root_x = centre;
    centre += drift;
    const auto ts = static_cast<std::int64_t>(std::floor(static_cast<double>(i) * 1000.0 /
                                                         kFrameRateHz));
    out.push_back(Kinematics(body, pose, ts));
    phase += speed;
    --remaining;
  }
  return out;
}

CsiFrame CsiForwardModel(const SkeletonFrame &skeleton, const SensingTopology &topology,
                         double noise_sigma, std::uint64_t seed) {
  Require(noise_sigma >= 0.0, ErrorKind::kConfig, "noise_sigma must be non-negative");
  const int e = topology.e();
  const int f = topology.f();
  Matrix signal(e, f);
  for (int p = 0; p < e; ++p) {
    Rng env(DeriveSeed(kEnvironmentSeed, static_cast<std::uint64_t>(p)));
    const double base = 1.0 + env.Uniform();
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Constant(f, base);
    for (int j = 0; j < kNumKeypoints; ++j) {
      const double x = skeleton.keypoints[j].x / kImageWidth - 0.5;
      const double y = skeleton.keypoints[j].y / kImageHeight - 0.5;
      const double gain_x = env.Uniform(-2.0, 2.0), gain_y = env.Uniform(-2.0, 2.0);
      const double amp = env.Uniform(0.2, 0.6);
      const double mod_x = env.Uniform(-1.0, 1.0), mod_y = env.Uniform(-1.0, 1.0);
      const double w_x = env.Uniform(-5.0, 5.0), w_y = env.Uniform(-5.0, 5.0);
      const double offset = env.Uniform(0.0, 2.0 * kPi);
      const auto freq = static_cast<double>(env.UniformInt(1, 3));
      const double level = gain_x * x + gain_y * y;
      const double a = amp * (1.0 + 0.5 * (mod_x * x + mod_y * y));
      const double ph = w_x * x + w_y * y + offset;
      for (int s = 0; s < f; ++s) {
        row[s] += level + a * std::cos(2.0 * kPi * freq * s / f + ph);
      }
    }
    signal.row(p) = row;
  }

  CsiFrame out;
  out.timestamp_ms = skeleton.timestamp_ms;
  out.values = signal;
  if (noise_sigma > 0.0) {
    Rng noise(seed);
    const double sd = noise_sigma * Rms(signal);
    for (Eigen::Index c = 0; c < f; ++c)
      for (Eigen::Index r = 0; r < e; ++r) out.values(r, c) += sd * noise.Normal();
  }
  out.values = out.values.cast<float>().cast<double>();
  return out;
}

std::pair<Dataset, Dataset> GenerateDataset(const GeneratorConfig &config) {
  const auto skeletons = GenerateSkeletonSequence(config);
  Dataset train{config.topology, {}, Split::kTrain};
  Dataset test{config.topology, {}, Split::kTest};
  const double test_share =
      static_cast<double>(config.n_test) / static_cast<double>(config.frames());
  std::size_t blocks_seen = 0, test_blocks = 0;
  bool to_test = false;
  for (std::size_t i = 0; i < skeletons.size(); ++i) {
    if (i % kSplitBlock == 0) {
      // Bresenham-style: keep the test share of blocks on target.
      to_test = static_cast<double>(test_blocks + 1) <=
                test_share * static_cast<double>(blocks_seen + 1) + 1e-9;
      ++blocks_seen;
      if (to_test) ++test_blocks;
    }
    bool use_test = to_test;
    if (use_test && test.samples.size() >= config.n_test) use_test = false;
    if (!use_test && train.samples.size() >= config.n_train) use_test = true;

    Sample s;
    s.csi = CsiForwardModel(skeletons[i], config.topology, config.noise_sigma,
                            DeriveSeed(config.seed, 1000 + i));
    if (config.subcarrier_drift > 0) {
      Rng drift(DeriveSeed(config.seed, 500000 + i));
      const auto offset = drift.UniformInt(-config.subcarrier_drift, config.subcarrier_drift);
      const int f = config.topology.f();
      const int shift = static_cast<int>((offset + f) % f);
      s.csi.values = Unflatten(WeakAugment(Flatten(s.csi.values), shift, config.topology.e(), f),
                               config.topology.e(), f);
    }
    s.csi.sequence_no = static_cast<std::uint32_t>(i);
    s.label = LabelFromSkeleton(skeletons[i]);
    s.visibility = skeletons[i].visibility;
    (use_test ? test : train).samples.push_back(std::move(s));
  }
  return {std::move(train), std::move(test)};
}

void AugmentConfig::Validate(int f) const {
  Require(strong_noise_sigma >= 0.0, ErrorKind::kConfig, "strong_noise_sigma must be >= 0");
  Require(weak_shift_max >= 0 && weak_shift_max < f, ErrorKind::kConfig,
          "weak_shift_max must lie in [0, f)");
}

Vector StrongAugment(const Vector &x, double sigma, std::uint64_t seed) {
  Require(sigma >= 0.0, ErrorKind::kConfig, "strong noise sigma must be >= 0");
  if (sigma == 0.0 || x.size() == 0) return x;
  const double sd = sigma * std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  Rng rng(seed);
  Vector out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += sd * rng.Normal();
  return out;
}

Vector WeakAugment(const Vector &x, int shift, int rows, int cols) {
  Require(x.size() == static_cast<Eigen::Index>(rows) * cols, ErrorKind::kShape,
          "weak_augment: length does not match rows x cols");
  Require(shift >= 0 && shift <= cols, ErrorKind::kRange,
          "weak_augment: shift " + std::to_string(shift) + " outside [0, " +
              std::to_string(cols) + "]");
  Vector out(x.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<Eigen::Index>(r) * cols + (c + shift) % cols] =
          x[static_cast<Eigen::Index>(r) * cols + c];
    }
  }
  return out;
}

}  // namespace powerskel::synth
