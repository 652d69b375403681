#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "powerskel/ckdformer.hpp"
#include "powerskel/eval.hpp"
#include "powerskel/saf.hpp"

namespace powerskel::train {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  // Ablation switches. Student count and backbone sharing live in `model`.
  bool use_saf = true;
  bool use_ckd = true;

  bool cosine = false;     // cosine decay of lr to 0 over the run
  double clip_norm = 5.0;  // global gradient-norm clip, <= 0 disables

  ckd::ModelConfig model;
  ckd::StepOptions step;
  saf::SAFConfig saf;

  void Validate() const;
};

nlohmann::json ToJson(const TrainConfig &config);
/// Missing fields keep their defaults.
TrainConfig TrainConfigFromJson(const nlohmann::json &j);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  std::vector<ckd::StudentLosses> students;  // epoch means
  int clipped_steps = 0;
  int sinkhorn_unconverged = 0;
};

nlohmann::json ToJson(const EpochMetrics &m);

struct TrainResult {
  ckd::CKDformerParams params;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics &, const ckd::CKDformerParams &)>;

/// Applies SAF when enabled, fits the input normaliser, initialises the model
/// (output bias at the mean training label) and runs plain SGD over shuffled
/// mini-batches. Throws kNumeric on a non-finite loss.
TrainResult Train(const Dataset &train_set, const TrainConfig &config,
                  const EpochCallback &on_epoch = {});

/// Initialised but untrained model with the same preprocessing as Train.
ckd::CKDformerParams Untrained(const Dataset &train_set, const TrainConfig &config);

struct Evaluation {
  std::vector<Vector> predictions;  // pixels
  eval::PckTable table;
};

/// `student` < 0 predicts with the mean of all students.
Evaluation Evaluate(const Dataset &test_set, const ckd::CKDformerParams &params,
                    const eval::PCKConfig &pck = {}, int student = -1);

// ---- checkpoints ---------------------------------------------------------
// Layout: "PSKC" | u32 version | u64 header length | JSON header | tensors as
// little-endian float64 in header order.

void SaveCheckpoint(const std::filesystem::path &path, const ckd::CKDformerParams &params);
ckd::CKDformerParams LoadCheckpoint(const std::filesystem::path &path);

}  // namespace powerskel::train
