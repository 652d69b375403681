#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "powerskel/datamodel.hpp"

namespace powerskel::eval {

struct PCKConfig {
  std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5};
  int rs_index = static_cast<int>(Joint::kRightShoulder);
  int lh_index = static_cast<int>(Joint::kLeftHip);

  void Validate() const;
};

/// Distance between the ground-truth right shoulder and left hip.
double TorsoLength(const SkeletonFrame &gt, const PCKConfig &config);

struct PckTable {
  std::vector<double> alphas;
  Matrix values;   // 17 x alphas, percent
  Vector average;  // per alpha, mean of the 17 rows
  std::size_t evaluated = 0;
  std::size_t excluded_degenerate = 0;  // zero torso length
  std::size_t excluded_invisible = 0;   // rs or lh not visible

  double at(int keypoint, double alpha) const;
  double average_at(double alpha) const;
};

/// PCK_i@a = share of evaluated samples whose keypoint i lies within
/// a * torso length of the ground truth (inclusive). Keypoints marked
/// invisible are left out of that keypoint's denominator.
PckTable Pck(std::span<const Vector> preds, std::span<const SkeletonFrame> gts,
             const PCKConfig &config = {});

/// Fixed-width text table: one row per keypoint plus an Average row, values
/// clamped to [0, 100] with two decimals.
std::string Report(const PckTable &table);
/// Reads back the numbers (and counts) from Report output.
PckTable ParseReport(const std::string &text);

nlohmann::json ToJson(const PckTable &table);
PckTable PckTableFromJson(const nlohmann::json &j);

/// Standalone SVG overlay of a ground-truth skeleton and a prediction on the
/// 512 x 424 image plane.
std::string RenderSvg(const SkeletonFrame &gt, const SkeletonFrame &pred,
                      const std::string &title = "");

}  // namespace powerskel::eval
