#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace powerskel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr int kNumKeypoints = 17;
inline constexpr int kLabelDim = 2 * kNumKeypoints;  // t

/// Canonical keypoint index table. Row order of the published per-joint
/// results table: head first, sacrum last.
enum class Joint : int {
  kHead = 0,
  kChest = 1,
  kRightShoulder = 2,
  kRightElbow = 3,
  kRightWrist = 4,
  kLeftShoulder = 5,
  kLeftElbow = 6,
  kLeftWrist = 7,
  kRightHip = 8,
  kRightKnee = 9,
  kRightAnkle = 10,
  kLeftHip = 11,
  kLeftKnee = 12,
  kLeftAnkle = 13,
  kAbdomen = 14,
  kNeck = 15,
  kSacrum = 16,
};

std::string_view JointName(int index);
/// Inverse of JointName; nullopt for unknown names.
std::optional<int> JointIndex(std::string_view name);

/// Skeleton edges used for bone-length checks and rendering.
std::span<const std::pair<int, int>> SkeletonBones();

// Nominal image plane (Kinect V2 depth resolution), in pixels.
inline constexpr double kImageWidth = 512.0;
inline constexpr double kImageHeight = 424.0;

struct SensingPath {
  std::string tx;
  std::string rx;
  friend bool operator==(const SensingPath &, const SensingPath &) = default;
};

/// Mutual-sensing network: m sensors, every ordered pair of distinct sensors
/// is one sniffing path, each path carries f subcarriers.
class SensingTopology {
 public:
  SensingTopology(std::vector<std::string> sensor_ids, int subcarriers);

  /// Sensors named 02:00:00:00:00:01 ... (locally administered MACs).
  static SensingTopology WithSyntheticIds(int m, int subcarriers);

  int m() const { return static_cast<int>(sensor_ids_.size()); }
  int f() const { return f_; }
  int e() const { return static_cast<int>(paths_.size()); }
  int k() const { return e() * f_; }
  const std::vector<std::string> &sensor_ids() const { return sensor_ids_; }
  const std::vector<SensingPath> &paths() const { return paths_; }
  std::optional<std::size_t> PathIndex(std::string_view tx, std::string_view rx) const;

  friend bool operator==(const SensingTopology &, const SensingTopology &) = default;

 private:
  std::vector<std::string> sensor_ids_;  // sorted
  int f_;
  std::vector<SensingPath> paths_;
};

/// e = m(m-1); throws kInvalidTopology for m < 2.
int PathCount(int m);

struct CsiFrame {
  std::int64_t timestamp_ms = 0;
  Matrix values;  // e x f amplitudes
  std::uint32_t sequence_no = 0;
};

void ValidateFrame(const CsiFrame &frame, const SensingTopology &topology);

/// Row-major flattening of the e x f matrix.
Vector Flatten(const CsiFrame &frame, const SensingTopology &topology);
Vector Flatten(const Matrix &values);
Matrix Unflatten(const Vector &flat, int rows, int cols);

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Keypoint &, const Keypoint &) = default;
};

struct SkeletonFrame {
  std::int64_t timestamp_ms = 0;
  std::array<Keypoint, kNumKeypoints> keypoints{};
  std::array<bool, kNumKeypoints> visibility{};

  SkeletonFrame() { visibility.fill(true); }
};

Vector LabelFromSkeleton(const SkeletonFrame &skeleton);
SkeletonFrame SkeletonFromLabel(const Vector &label, std::int64_t timestamp_ms = 0,
                                const std::array<bool, kNumKeypoints> *visibility = nullptr);

struct Sample {
  CsiFrame csi;
  Vector label;  // length 34: x0, y0, ..., x16, y16
  std::array<bool, kNumKeypoints> visibility{};

  Sample() { visibility.fill(true); }
  SkeletonFrame Skeleton() const;
};

enum class Split { kTrain, kTest };
std::string_view ToString(Split split);
Split ParseSplit(std::string_view text);

struct Dataset {
  SensingTopology topology;
  std::vector<Sample> samples;
  Split split = Split::kTrain;

  void Validate() const;
};

/// Throws kOrdering if the two splits share a timestamp.
void CheckDisjoint(const Dataset &train, const Dataset &test);

struct SyncResult {
  std::vector<Sample> samples;
  std::size_t dropped_csi = 0;
  std::size_t dropped_labels = 0;
};

/// Pairs CSI frames with skeleton frames by mutual nearest timestamp: a pair
/// is formed when each is the other's nearest neighbour (ties go to the
/// earlier timestamp) and |dt| <= max_skew_ms. Everything else is dropped.
SyncResult Synchronize(std::span<const CsiFrame> csi_stream,
                       std::span<const SkeletonFrame> label_stream, std::int64_t max_skew_ms);

}  // namespace powerskel
