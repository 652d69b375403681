#include "powerskel/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "powerskel/error.hpp"
#include "powerskel/random.hpp"

namespace powerskel::train {

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'S', 'K', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json BackboneToJson(const conformer::ConformerConfig &c) {
  return {{"k", c.k},           {"tokens", c.tokens}, {"layers", c.layers},
          {"heads", c.heads},   {"d_ff", c.d_ff},     {"kernel", c.kernel}};
}

conformer::ConformerConfig BackboneFromJson(const nlohmann::json &j,
                                            conformer::ConformerConfig c = {}) {
  c.k = j.value("k", c.k);
  c.tokens = j.value("tokens", c.tokens);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.kernel = j.value("kernel", c.kernel);
  return c;
}

nlohmann::json ModelToJson(const ckd::ModelConfig &m) {
  return {{"backbone", BackboneToJson(m.backbone)},
          {"hidden", m.hidden},
          {"students", m.students},
          {"shared_backbone", m.shared_backbone}};
}

ckd::ModelConfig ModelFromJson(const nlohmann::json &j, ckd::ModelConfig m = {}) {
  if (j.contains("backbone")) m.backbone = BackboneFromJson(j.at("backbone"), m.backbone);
  m.hidden = j.value("hidden", m.hidden);
  m.students = j.value("students", m.students);
  m.shared_backbone = j.value("shared_backbone", m.shared_backbone);
  return m;
}

double GradNorm(const ckd::CKDformerParams &g) {
  double sq = 0.0;
  ckd::VisitTensors(g, "", [&](const std::string &, const auto &t) { sq += t.squaredNorm(); });
  return std::sqrt(sq);
}

void SgdUpdate(ckd::CKDformerParams &params, const ckd::CKDformerParams &grads, double lr) {
  std::vector<Eigen::Map<const Matrix>> gs;
  ckd::VisitTensors(grads, "", [&](const std::string &, const auto &t) {
    gs.emplace_back(t.data(), t.rows(), t.cols());
  });
  std::size_t i = 0;
  ckd::VisitTensors(params, "", [&](const std::string &, auto &t) {
    Eigen::Map<Matrix>(t.data(), t.rows(), t.cols()) -= lr * gs[i++];
  });
}

Dataset Preprocess(const Dataset &data, bool use_saf, const saf::SAFConfig &config) {
  return use_saf ? saf::FilterDataset(data, config) : data;
}

ckd::CKDformerParams InitModel(const Dataset &prepared, const TrainConfig &config) {
  auto params = ckd::CKDformerParams::Init(config.model, DeriveSeed(config.seed, 1));
  params.use_saf = config.use_saf;
  params.saf_config = config.saf;
  params.normalizer = ckd::FitNormalizer(prepared);
  Vector mean_label = Vector::Zero(kLabelDim);
  for (const auto &s : prepared.samples) mean_label += ckd::NormalizeLabel(s.label);
  mean_label /= static_cast<double>(prepared.samples.size());
  for (auto &head : params.heads) head.b3 = mean_label;
  return params;
}

void WriteLe64(std::ostream &out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

std::uint64_t ReadLe64(std::istream &in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char *>(buf), 8);
  Require(in.gcount() == 8, ErrorKind::kDecode, "checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void TrainConfig::Validate() const {
  Require(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
  Require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  Require(lr > 0.0 && std::isfinite(lr), ErrorKind::kConfig, "lr must be positive");
  model.Validate();
  step.sinkhorn.Validate();
  step.weights.Validate();
  if (use_saf) saf.Validate();
}

nlohmann::json ToJson(const TrainConfig &c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"seed", c.seed},
          {"use_saf", c.use_saf},
          {"use_ckd", c.use_ckd},
          {"cosine", c.cosine},
          {"clip_norm", c.clip_norm},
          {"model", ModelToJson(c.model)},
          {"augment",
           {{"strong_noise_sigma", c.step.augment.strong_noise_sigma},
            {"weak_shift_max", c.step.augment.weak_shift_max}}},
          {"sinkhorn",
           {{"epsilon", c.step.sinkhorn.epsilon},
            {"niter", c.step.sinkhorn.niter},
            {"thresh", c.step.sinkhorn.thresh}}},
          {"beta", c.step.weights.beta},
          {"saf", saf::ToJson(c.saf)}};
}

TrainConfig TrainConfigFromJson(const nlohmann::json &j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.use_saf = j.value("use_saf", c.use_saf);
  c.use_ckd = j.value("use_ckd", c.use_ckd);
  c.cosine = j.value("cosine", c.cosine);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("model")) c.model = ModelFromJson(j.at("model"), c.model);
  if (j.contains("augment")) {
    const auto &a = j.at("augment");
    c.step.augment.strong_noise_sigma =
        a.value("strong_noise_sigma", c.step.augment.strong_noise_sigma);
    c.step.augment.weak_shift_max = a.value("weak_shift_max", c.step.augment.weak_shift_max);
  }
  if (j.contains("sinkhorn")) {
    const auto &s = j.at("sinkhorn");
    c.step.sinkhorn.epsilon = s.value("epsilon", c.step.sinkhorn.epsilon);
    c.step.sinkhorn.niter = s.value("niter", c.step.sinkhorn.niter);
    c.step.sinkhorn.thresh = s.value("thresh", c.step.sinkhorn.thresh);
  }
  c.step.weights.beta = j.value("beta", c.step.weights.beta);
  if (j.contains("saf")) c.saf = saf::SAFConfigFromJson(j.at("saf"), c.saf);
  return c;
}

nlohmann::json ToJson(const EpochMetrics &m) {
  nlohmann::json students = nlohmann::json::array();
  for (const auto &s : m.students) {
    students.push_back({{"data", s.data}, {"ot", s.ot}, {"total", s.total}});
  }
  return {{"epoch", m.epoch},
          {"lr", m.lr},
          {"students", students},
          {"clipped_steps", m.clipped_steps},
          {"sinkhorn_unconverged", m.sinkhorn_unconverged}};
}

ckd::CKDformerParams Untrained(const Dataset &train_set, const TrainConfig &config) {
  config.Validate();
  return InitModel(Preprocess(train_set, config.use_saf, config.saf), config);
}

TrainResult Train(const Dataset &train_set, const TrainConfig &config,
                  const EpochCallback &on_epoch) {
  config.Validate();
  Require(!train_set.samples.empty(), ErrorKind::kShape, "training set is empty");
  Require(config.model.backbone.k == train_set.topology.k(), ErrorKind::kConfig,
          "model k " + std::to_string(config.model.backbone.k) + " does not match dataset k " +
              std::to_string(train_set.topology.k()));
  if (config.use_ckd) {
    config.step.augment.Validate(train_set.topology.f());
  }

  const Dataset data = Preprocess(train_set, config.use_saf, config.saf);
  TrainResult result{InitModel(data, config), {}};
  auto &params = result.params;

  ckd::StepOptions options = config.step;
  options.use_ckd = config.use_ckd;
  options.sinkhorn.t = kLabelDim;

  const std::size_t n = data.samples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * config.epochs;
  std::vector<std::size_t> order(n);
  std::vector<Sample> minibatch;
  std::size_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(DeriveSeed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle.UniformInt(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    EpochMetrics metrics;
    metrics.epoch = epoch + 1;
    metrics.students.assign(static_cast<std::size_t>(params.students()), {});
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      minibatch.clear();
      for (std::size_t i = b * batch; i < std::min(n, (b + 1) * batch); ++i) {
        minibatch.push_back(data.samples[order[i]]);
      }
      const double lr =
          config.cosine
              ? config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                                  total_steps))
              : config.lr;
      metrics.lr = lr;

      auto res = ckd::CkdStep(minibatch, params, options,
                              DeriveSeed(config.seed, 1'000'000 + step));
      for (std::size_t s = 0; s < res.losses.size(); ++s) {
        const auto &l = res.losses[s];
        if (!std::isfinite(l.total)) {
          Fail(ErrorKind::kNumeric, "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                        " batch " + std::to_string(b) + " student " +
                                        std::to_string(s));
        }
        const double w = static_cast<double>(minibatch.size()) / static_cast<double>(n);
        metrics.students[s].data += w * l.data;
        metrics.students[s].ot += w * l.ot;
        metrics.students[s].total += w * l.total;
      }
      metrics.sinkhorn_unconverged += res.sinkhorn_unconverged;

      const double norm = GradNorm(res.grads);
      Require(std::isfinite(norm), ErrorKind::kNumeric,
              "non-finite gradient at epoch " + std::to_string(epoch + 1) + " batch " +
                  std::to_string(b));
      double scale = 1.0;
      if (config.clip_norm > 0.0 && norm > config.clip_norm) {
        scale = config.clip_norm / norm;
        ++metrics.clipped_steps;
        spdlog::debug("epoch {} batch {}: gradient norm {:.3f} clipped to {}", epoch + 1, b, norm,
                      config.clip_norm);
      }
      SgdUpdate(params, res.grads, lr * scale);
    }
    if (metrics.clipped_steps > 0) {
      spdlog::info("epoch {}: gradient clipped on {} of {} steps", epoch + 1, metrics.clipped_steps,
                   steps_per_epoch);
    }
    if (on_epoch) on_epoch(metrics, params);
    result.history.push_back(std::move(metrics));
  }
  return result;
}

Evaluation Evaluate(const Dataset &test_set, const ckd::CKDformerParams &params,
                    const eval::PCKConfig &pck, int student) {
  Require(!test_set.samples.empty(), ErrorKind::kEmptyReport, "test set is empty");
  const Dataset data = Preprocess(test_set, params.use_saf, params.saf_config);
  Evaluation out;
  std::vector<SkeletonFrame> gts;
  out.predictions.reserve(data.samples.size());
  for (const auto &s : data.samples) {
    out.predictions.push_back(ckd::Predict(Flatten(s.csi.values), params, student));
    gts.push_back(s.Skeleton());
  }
  out.table = eval::Pck(out.predictions, gts, pck);
  return out;
}

void SaveCheckpoint(const std::filesystem::path &path, const ckd::CKDformerParams &params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nlohmann::json header;
  header["format"] = "powerskel-checkpoint";
  header["model"] = ModelToJson(params.config);
  header["students"] = params.students();
  header["use_saf"] = params.use_saf;
  header["saf"] = saf::ToJson(params.saf_config);
  nlohmann::json tensors = nlohmann::json::array();
  auto describe = [&](const std::string &name, const auto &t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  };
  ckd::VisitTensors(params, "", describe);
  describe("normalizer.mean", params.normalizer.mean);
  describe("normalizer.scale", params.normalizer.scale);
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  char version[4];
  for (int i = 0; i < 4; ++i) version[i] = static_cast<char>((kCheckpointVersion >> (8 * i)) & 0xFF);
  out.write(version, 4);
  WriteLe64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write = [&](const std::string &, const auto &t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) WriteLe64(out, std::bit_cast<std::uint64_t>(t.data()[i]));
  };
  ckd::VisitTensors(params, "", write);
  write("", params.normalizer.mean);
  write("", params.normalizer.scale);
  Require(static_cast<bool>(out), ErrorKind::kIo, "failed writing " + path.string());
}

ckd::CKDformerParams LoadCheckpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  Require(in.gcount() == 4 && std::memcmp(magic, kCheckpointMagic, 4) == 0, ErrorKind::kDecode,
          path.string() + " is not a checkpoint");
  unsigned char version[4];
  in.read(reinterpret_cast<char *>(version), 4);
  const std::uint32_t v = version[0] | (version[1] << 8) | (version[2] << 16) |
                          (static_cast<std::uint32_t>(version[3]) << 24);
  Require(v == kCheckpointVersion, ErrorKind::kDecode,
          "unsupported checkpoint version " + std::to_string(v));
  const std::uint64_t len = ReadLe64(in);
  Require(len < (1ULL << 30), ErrorKind::kDecode, "checkpoint header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Require(static_cast<std::uint64_t>(in.gcount()) == len, ErrorKind::kDecode,
          "checkpoint truncated");
  const auto header = nlohmann::json::parse(text);

  const auto model = ModelFromJson(header.at("model"));
  auto params = ckd::CKDformerParams::Init(model, 0);
  params.use_saf = header.value("use_saf", false);
  params.saf_config = saf::SAFConfigFromJson(header.value("saf", nlohmann::json::object()));
  const auto &tensors = header.at("tensors");
  std::size_t index = 0;
  auto read = [&](const std::string &name, auto &t) {
    Require(index < tensors.size(), ErrorKind::kDecode, "checkpoint is missing " + name);
    const auto &d = tensors[index++];
    Require(d.at("name") == name && d.at("rows") == t.rows() && d.at("cols") == t.cols(),
            ErrorKind::kDecode, "checkpoint tensor mismatch at " + name);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = std::bit_cast<double>(ReadLe64(in));
    }
  };
  ckd::VisitTensors(params, "", read);
  read("normalizer.mean", params.normalizer.mean);
  read("normalizer.scale", params.normalizer.scale);
  return params;
}

}  // namespace powerskel::train
