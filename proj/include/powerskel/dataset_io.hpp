#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "powerskel/datamodel.hpp"

namespace powerskel {

/// Sidecar manifest for a dataset directory. The directory holds
/// `manifest.json` plus one `<split>.jsonl` record file per split, one sample
/// per line.
struct DatasetManifest {
  int m = 0;
  int f = 0;
  std::vector<std::string> sensor_ids;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
  bool filtered = false;
  nlohmann::json generator = nlohmann::json::object();  // GeneratorConfig snapshot
  nlohmann::json saf = nlohmann::json::object();        // SAFConfig snapshot when filtered

  SensingTopology Topology() const { return SensingTopology(sensor_ids, f); }
};

nlohmann::json ToJson(const DatasetManifest &manifest);
DatasetManifest ManifestFromJson(const nlohmann::json &j);

nlohmann::json SampleToJson(const Sample &sample);
Sample SampleFromJson(const nlohmann::json &j, const SensingTopology &topology);

std::filesystem::path SplitPath(const std::filesystem::path &dir, Split split);

void WriteManifest(const std::filesystem::path &dir, const DatasetManifest &manifest);
DatasetManifest ReadManifest(const std::filesystem::path &dir);

void WriteSplit(const std::filesystem::path &dir, const Dataset &dataset);
Dataset ReadSplit(const std::filesystem::path &dir, Split split);

/// Writes manifest and both splits; fills in split sizes from the data.
void WriteDataset(const std::filesystem::path &dir, DatasetManifest manifest, const Dataset &train,
                  const Dataset &test);

}  // namespace powerskel
