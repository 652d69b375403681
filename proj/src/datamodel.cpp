#include "powerskel/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "powerskel/error.hpp"

namespace powerskel {

std::string_view ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidTopology: return "invalid-topology";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kOrdering: return "ordering";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kEncode: return "encode";
    case ErrorKind::kDecode: return "decode";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kDegeneratePose: return "degenerate-pose";
    case ErrorKind::kEmptyReport: return "empty-report";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::string_view ToString(DecodeReason reason) {
  switch (reason) {
    case DecodeReason::kTruncated: return "truncated";
    case DecodeReason::kMagic: return "magic";
    case DecodeReason::kVersion: return "version";
    case DecodeReason::kLength: return "length";
    case DecodeReason::kSelfPath: return "self-path";
    case DecodeReason::kNonFinite: return "non-finite";
  }
  return "unknown";
}

namespace {

constexpr std::array<std::string_view, kNumKeypoints> kJointNames = {
    "Head",     "Chest",    "R.Shoulder", "R.Elbow", "R.Wrist", "L.Shoulder",
    "L.Elbow",  "L.Wrist",  "R.Hip",      "R.Knee",  "R.Ankle", "L.Hip",
    "L.Knee",   "L.Ankle",  "Abdomen",    "Neck",    "Sacrum",
};

constexpr std::array<std::pair<int, int>, 16> kBones = {{
    {15, 0},   // neck - head
    {15, 1},   // neck - chest
    {1, 14},   // chest - abdomen
    {14, 16},  // abdomen - sacrum
    {15, 2},  {2, 3},   {3, 4},    // right arm
    {15, 5},  {5, 6},   {6, 7},    // left arm
    {16, 8},  {8, 9},   {9, 10},   // right leg
    {16, 11}, {11, 12}, {12, 13},  // left leg
}};

}  // namespace

std::string_view JointName(int index) {
  Require(index >= 0 && index < kNumKeypoints, ErrorKind::kIndex,
          "keypoint index " + std::to_string(index));
  return kJointNames[static_cast<std::size_t>(index)];
}

std::optional<int> JointIndex(std::string_view name) {
  for (std::size_t i = 0; i < kJointNames.size(); ++i) {
    if (kJointNames[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::span<const std::pair<int, int>> SkeletonBones() { return kBones; }

int PathCount(int m) {
  Require(m >= 2, ErrorKind::kInvalidTopology, "need at least 2 sensors, got " + std::to_string(m));
  return m * (m - 1);
}

SensingTopology::SensingTopology(std::vector<std::string> sensor_ids, int subcarriers)
    : sensor_ids_(std::move(sensor_ids)), f_(subcarriers) {
  PathCount(static_cast<int>(sensor_ids_.size()));
  Require(f_ >= 1, ErrorKind::kInvalidTopology, "subcarrier count must be positive");
  std::sort(sensor_ids_.begin(), sensor_ids_.end());
  Require(std::adjacent_find(sensor_ids_.begin(), sensor_ids_.end()) == sensor_ids_.end(),
          ErrorKind::kInvalidTopology, "duplicate sensor id");
  for (const auto &tx : sensor_ids_) {
    for (const auto &rx : sensor_ids_) {
      if (tx != rx) paths_.push_back({tx, rx});
    }
  }
}

SensingTopology SensingTopology::WithSyntheticIds(int m, int subcarriers) {
  PathCount(m);
  std::vector<std::string> ids;
  for (int i = 1; i <= m; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "02:00:00:00:%02x:%02x", (i >> 8) & 0xff, i & 0xff);
    ids.emplace_back(buf);
  }
  return SensingTopology(std::move(ids), subcarriers);
}

std::optional<std::size_t> SensingTopology::PathIndex(std::string_view tx,
                                                      std::string_view rx) const {
  auto it = std::lower_bound(paths_.begin(), paths_.end(), std::pair{tx, rx},
                             [](const SensingPath &p, const std::pair<std::string_view,
                                                                      std::string_view> &key) {
                               return std::pair<std::string_view, std::string_view>(p.tx, p.rx) <
                                      key;
                             });
  if (it == paths_.end() || it->tx != tx || it->rx != rx) return std::nullopt;
  return static_cast<std::size_t>(it - paths_.begin());
}

void ValidateFrame(const CsiFrame &frame, const SensingTopology &topology) {
  Require(frame.values.rows() == topology.e() && frame.values.cols() == topology.f(),
          ErrorKind::kShape,
          "frame is " + std::to_string(frame.values.rows()) + "x" +
              std::to_string(frame.values.cols()) + ", topology wants " +
              std::to_string(topology.e()) + "x" + std::to_string(topology.f()));
  Require(frame.values.allFinite(), ErrorKind::kNumeric, "frame has non-finite entries");
}

Vector Flatten(const Matrix &values) {
  Vector out(values.size());
  Eigen::Index n = 0;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out[n++] = values(r, c);
  }
  return out;
}

Vector Flatten(const CsiFrame &frame, const SensingTopology &topology) {
  ValidateFrame(frame, topology);
  return Flatten(frame.values);
}

Matrix Unflatten(const Vector &flat, int rows, int cols) {
  Require(flat.size() == static_cast<Eigen::Index>(rows) * cols, ErrorKind::kShape,
          "cannot reshape length " + std::to_string(flat.size()));
  Matrix out(rows, cols);
  Eigen::Index n = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out(r, c) = flat[n++];
  }
  return out;
}

Vector LabelFromSkeleton(const SkeletonFrame &skeleton) {
  Vector label(kLabelDim);
  for (int j = 0; j < kNumKeypoints; ++j) {
    label[2 * j] = skeleton.keypoints[j].x;
    label[2 * j + 1] = skeleton.keypoints[j].y;
  }
  return label;
}

SkeletonFrame SkeletonFromLabel(const Vector &label, std::int64_t timestamp_ms,
                                const std::array<bool, kNumKeypoints> *visibility) {
  Require(label.size() == kLabelDim, ErrorKind::kShape,
          "label length " + std::to_string(label.size()) + " != 34");
  SkeletonFrame out;
  out.timestamp_ms = timestamp_ms;
  for (int j = 0; j < kNumKeypoints; ++j) {
    out.keypoints[j] = {label[2 * j], label[2 * j + 1]};
  }
  if (visibility != nullptr) out.visibility = *visibility;
  return out;
}

SkeletonFrame Sample::Skeleton() const {
  return SkeletonFromLabel(label, csi.timestamp_ms, &visibility);
}

std::string_view ToString(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split ParseSplit(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  Fail(ErrorKind::kConfig, "unknown split '" + std::string(text) + "'");
}

void Dataset::Validate() const {
  for (const auto &s : samples) {
    ValidateFrame(s.csi, topology);
    Require(s.label.size() == kLabelDim, ErrorKind::kShape, "label length != 34");
    Require(s.label.allFinite(), ErrorKind::kNumeric, "label has non-finite entries");
  }
}

void CheckDisjoint(const Dataset &train, const Dataset &test) {
  std::set<std::int64_t> seen;
  for (const auto &s : train.samples) seen.insert(s.csi.timestamp_ms);
  for (const auto &s : test.samples) {
    Require(!seen.contains(s.csi.timestamp_ms), ErrorKind::kOrdering,
            "train/test share timestamp " + std::to_string(s.csi.timestamp_ms));
  }
}

namespace {

template <typename T, typename Ts>
void RequireSorted(std::span<const T> xs, Ts ts, const char *name) {
  for (std::size_t i = 1; i < xs.size(); ++i) {
    Require(ts(xs[i - 1]) <= ts(xs[i]), ErrorKind::kOrdering,
            std::string(name) + " stream not sorted at index " + std::to_string(i));
  }
}

// Index of the element of `sorted` nearest to `t`; ties resolve to the earlier.
template <typename T, typename Ts>
std::size_t Nearest(std::span<const T> sorted, std::int64_t t, Ts ts) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), t,
                             [&](const T &x, std::int64_t v) { return ts(x) < v; });
  if (it == sorted.end()) return sorted.size() - 1;
  auto idx = static_cast<std::size_t>(it - sorted.begin());
  if (idx == 0) return 0;
  // The run of equal timestamps before idx resolves to its first element.
  std::size_t prev = idx - 1;
  while (prev > 0 && ts(sorted[prev - 1]) == ts(sorted[prev])) --prev;
  return (t - ts(sorted[prev]) <= ts(sorted[idx]) - t) ? prev : idx;
}

}  // namespace

SyncResult Synchronize(std::span<const CsiFrame> csi_stream,
                       std::span<const SkeletonFrame> label_stream, std::int64_t max_skew_ms) {
  auto csi_ts = [](const CsiFrame &f) { return f.timestamp_ms; };
  auto label_ts = [](const SkeletonFrame &f) { return f.timestamp_ms; };
  RequireSorted(csi_stream, csi_ts, "csi");
  RequireSorted(label_stream, label_ts, "label");

  SyncResult out;
  if (csi_stream.empty() || label_stream.empty()) {
    out.dropped_csi = csi_stream.size();
    out.dropped_labels = label_stream.size();
    return out;
  }
  std::size_t matched = 0;
  for (std::size_t c = 0; c < csi_stream.size(); ++c) {
    const auto &frame = csi_stream[c];
    std::size_t l = Nearest(label_stream, frame.timestamp_ms, label_ts);
    const auto &skel = label_stream[l];
    if (std::llabs(skel.timestamp_ms - frame.timestamp_ms) > max_skew_ms) continue;
    if (Nearest(csi_stream, skel.timestamp_ms, csi_ts) != c) continue;
    Sample s;
    s.csi = frame;
    s.label = LabelFromSkeleton(skel);
    s.visibility = skel.visibility;
    out.samples.push_back(std::move(s));
    ++matched;
  }
  out.dropped_csi = csi_stream.size() - matched;
  out.dropped_labels = label_stream.size() - matched;
  return out;
}

}  // namespace powerskel
