#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "powerskel/datamodel.hpp"

namespace powerskel::synth {

/// Scripted action templates the skeleton generator cycles through.
enum class Motion { kReachUp, kSwingArm, kSquat };

std::string_view ToString(Motion motion);
Motion ParseMotion(std::string_view text);

inline constexpr double kFrameRateHz = 30.0;

struct GeneratorConfig {
  std::uint64_t seed = 7;
  std::size_t n_train = 512;
  std::size_t n_test = 128;
  SensingTopology topology = SensingTopology::WithSyntheticIds(4, 16);
  double noise_sigma = 0.02;
  /// Each generated frame's subcarrier axis is cyclically offset by a random
  /// integer in [-subcarrier_drift, subcarrier_drift] (receiver misalignment).
  int subcarrier_drift = 2;
  std::vector<Motion> motions{Motion::kReachUp, Motion::kSwingArm, Motion::kSquat};

  void Validate() const;
  std::size_t frames() const { return n_train + n_test; }
};

nlohmann::json ToJson(const GeneratorConfig &config);
GeneratorConfig GeneratorConfigFromJson(const nlohmann::json &j);

/// 30 Hz sequence of frames() poses for one subject (bone lengths fixed for
/// the whole sequence). Timestamps are floor(i * 1000 / 30) ms.
std::vector<SkeletonFrame> GenerateSkeletonSequence(const GeneratorConfig &config);

/// Smooth pose -> e x f amplitude map: each (path, subcarrier) entry is a
/// baseline plus a mixture of sinusoids over the subcarrier index whose
/// amplitudes and phases depend on the keypoint positions. Gaussian noise of
/// std noise_sigma * RMS(signal) is added, and values are rounded to single
/// precision so they survive the 32-bit wire format unchanged.
CsiFrame CsiForwardModel(const SkeletonFrame &skeleton, const SensingTopology &topology,
                         double noise_sigma, std::uint64_t seed);

/// Splits the generated sequence into disjoint train/test datasets by
/// alternating 16-frame blocks in proportion to n_train : n_test. Frames get
/// the per-frame subcarrier drift on top of the forward model.
std::pair<Dataset, Dataset> GenerateDataset(const GeneratorConfig &config);

struct AugmentConfig {
  double strong_noise_sigma = 0.05;
  int weak_shift_max = 5;
  std::uint64_t seed = 0;

  void Validate(int f) const;
};

/// x + N(0, (sigma * RMS(x))^2), seeded.
Vector StrongAugment(const Vector &x, double sigma, std::uint64_t seed);
inline Vector StrongAugment(const Vector &x, const AugmentConfig &config) {
  return StrongAugment(x, config.strong_noise_sigma, config.seed);
}

/// Rotates every path row (x viewed as rows x cols) right by `shift`
/// subcarriers. shift == cols is a full cycle.
Vector WeakAugment(const Vector &x, int shift, int rows, int cols);

}  // namespace powerskel::synth
