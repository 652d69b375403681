#include "powerskel/dataset_io.hpp"

#include <fstream>

#include "powerskel/error.hpp"

namespace powerskel {

namespace fs = std::filesystem;
using nlohmann::json;

json ToJson(const DatasetManifest &manifest) {
  return json{{"format", "powerskel-dataset"},
              {"version", 1},
              {"m", manifest.m},
              {"f", manifest.f},
              {"sensor_ids", manifest.sensor_ids},
              {"splits", {{"train", manifest.n_train}, {"test", manifest.n_test}}},
              {"seed", manifest.seed},
              {"filtered", manifest.filtered},
              {"generator", manifest.generator},
              {"saf", manifest.saf}};
}

DatasetManifest ManifestFromJson(const json &j) {
  try {
    DatasetManifest out;
    out.m = j.at("m").get<int>();
    out.f = j.at("f").get<int>();
    out.sensor_ids = j.at("sensor_ids").get<std::vector<std::string>>();
    out.n_train = j.at("splits").at("train").get<std::size_t>();
    out.n_test = j.at("splits").at("test").get<std::size_t>();
    out.seed = j.value("seed", std::uint64_t{0});
    out.filtered = j.value("filtered", false);
    out.generator = j.value("generator", json::object());
    out.saf = j.value("saf", json::object());
    Require(static_cast<int>(out.sensor_ids.size()) == out.m, ErrorKind::kInvalidTopology,
            "manifest m does not match sensor_ids");
    return out;
  } catch (const json::exception &e) {
    Fail(ErrorKind::kIo, std::string("bad manifest: ") + e.what());
  }
}

json SampleToJson(const Sample &sample) {
  const auto &v = sample.csi.values;
  std::vector<double> csi;
  csi.reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) csi.push_back(v(r, c));
  }
  return json{{"timestamp_ms", sample.csi.timestamp_ms},
              {"sequence_no", sample.csi.sequence_no},
              {"csi", std::move(csi)},
              {"label", std::vector<double>(sample.label.begin(), sample.label.end())},
              {"visibility", std::vector<bool>(sample.visibility.begin(), sample.visibility.end())}};
}

Sample SampleFromJson(const json &j, const SensingTopology &topology) {
  try {
    Sample s;
    s.csi.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    s.csi.sequence_no = j.value("sequence_no", std::uint32_t{0});
    const auto csi = j.at("csi").get<std::vector<double>>();
    Require(csi.size() == static_cast<std::size_t>(topology.k()), ErrorKind::kShape,
            "record csi length " + std::to_string(csi.size()) + " != " +
                std::to_string(topology.k()));
    s.csi.values = Unflatten(Eigen::Map<const Vector>(csi.data(), topology.k()), topology.e(),
                             topology.f());
    const auto label = j.at("label").get<std::vector<double>>();
    Require(label.size() == kLabelDim, ErrorKind::kShape, "record label length != 34");
    s.label = Eigen::Map<const Vector>(label.data(), kLabelDim);
    if (j.contains("visibility")) {
      const auto vis = j.at("visibility").get<std::vector<bool>>();
      Require(vis.size() == kNumKeypoints, ErrorKind::kShape, "record visibility length != 17");
      for (int i = 0; i < kNumKeypoints; ++i) s.visibility[i] = vis[i];
    }
    return s;
  } catch (const json::exception &e) {
    Fail(ErrorKind::kIo, std::string("bad record: ") + e.what());
  }
}

fs::path SplitPath(const fs::path &dir, Split split) {
  return dir / (std::string(ToString(split)) + ".jsonl");
}

void WriteManifest(const fs::path &dir, const DatasetManifest &manifest) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  Require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
  out << ToJson(manifest).dump(2) << '\n';
}

DatasetManifest ReadManifest(const fs::path &dir) {
  std::ifstream in(dir / "manifest.json");
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + (dir / "manifest.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    Fail(ErrorKind::kIo, std::string("bad manifest: ") + e.what());
  }
  return ManifestFromJson(j);
}

void WriteSplit(const fs::path &dir, const Dataset &dataset) {
  fs::create_directories(dir);
  const auto path = SplitPath(dir, dataset.split);
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  for (const auto &s : dataset.samples) out << SampleToJson(s).dump() << '\n';
}

Dataset ReadSplit(const fs::path &dir, Split split) {
  const auto manifest = ReadManifest(dir);
  Dataset out{manifest.Topology(), {}, split};
  const auto path = SplitPath(dir, split);
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception &e) {
      Fail(ErrorKind::kIo, path.string() + ": " + e.what());
    }
    out.samples.push_back(SampleFromJson(j, out.topology));
  }
  out.Validate();
  return out;
}

void WriteDataset(const fs::path &dir, DatasetManifest manifest, const Dataset &train,
                  const Dataset &test) {
  CheckDisjoint(train, test);
  manifest.m = train.topology.m();
  manifest.f = train.topology.f();
  manifest.sensor_ids = train.topology.sensor_ids();
  manifest.n_train = train.samples.size();
  manifest.n_test = test.samples.size();
  WriteManifest(dir, manifest);
  WriteSplit(dir, train);
  WriteSplit(dir, test);
}

}  // namespace powerskel
