#include "powerskel/cli.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "powerskel/dataset_io.hpp"
#include "powerskel/error.hpp"
#include "powerskel/eval.hpp"
#include "powerskel/netsim.hpp"
#include "powerskel/saf.hpp"
#include "powerskel/synth.hpp"
#include "powerskel/train.hpp"

namespace powerskel::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

void OnSignal(int) { g_interrupted.store(true); }

std::string UtcNow() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void WriteText(const fs::path &path, const std::string &text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  Require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path.string());
}

void WriteJson(const fs::path &path, const json &j) { WriteText(path, j.dump(2) + "\n"); }

/// Everything a run needs to be repeated: the command line, the fully
/// resolved options (feed back with --config), and hashes of what it read
/// and wrote.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv, std::string config_toml,
              std::uint64_t seed)
      : command_(std::move(command)), argv_(std::move(argv)), config_(std::move(config_toml)),
        seed_(seed), started_(UtcNow()) {}

  void Input(const fs::path &p) { inputs_.push_back(p); }
  void Output(const fs::path &p) { outputs_.push_back(p); }
  void Set(const std::string &key, json value) { extra_[key] = std::move(value); }

  void Write(const fs::path &path) const {
    json j = {{"command", command_},   {"argv", argv_},      {"config", config_},
              {"seed", seed_},         {"started", started_}, {"finished", UtcNow()},
              {"version", "0.1.0"}};
    j["inputs"] = json::array();
    for (const auto &p : inputs_) j["inputs"].push_back(HashArtifacts(p));
    j["outputs"] = json::array();
    for (const auto &p : outputs_) j["outputs"].push_back(HashArtifacts(p));
    for (const auto &[k, v] : extra_.items()) j[k] = v;
    WriteJson(path, j);
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string config_;
  std::uint64_t seed_;
  std::string started_;
  std::vector<fs::path> inputs_, outputs_;
  json extra_ = json::object();
};

struct Loaded {
  DatasetManifest manifest;
  Dataset train, test;
};

Loaded LoadDataset(const fs::path &dir) {
  return {ReadManifest(dir), ReadSplit(dir, Split::kTrain), ReadSplit(dir, Split::kTest)};
}

Dataset LoadSplit(const fs::path &dir, const std::string &split) {
  return ReadSplit(dir, ParseSplit(split));
}

// ---- shared option groups ---------------------------------------------------

struct Global {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string log_level = "info";
};

struct TrainFlags {
  train::TrainConfig c;
  std::string solver = "minimum-norm";
  int checkpoint_every = 50;
};

/// Negatable flag whose default shows up in help and config snapshots.
CLI::Option *AddSwitch(CLI::App *app, const std::string &names, bool &value, const std::string &help) {
  return app->add_flag(names, value, help)->default_str(value ? "true" : "false");
}

void AddTrainFlags(CLI::App *app, TrainFlags &f) {
  auto &c = f.c;
  app->add_option("--epochs", c.epochs, "training epochs")->capture_default_str();
  app->add_option("--batch", c.batch_size, "mini-batch size")->capture_default_str();
  app->add_option("--lr", c.lr, "SGD learning rate")->capture_default_str();
  AddSwitch(app, "--cosine,!--no-cosine", c.cosine, "cosine learning-rate decay");
  app->add_option("--clip", c.clip_norm, "global gradient-norm clip (<= 0 disables)")->capture_default_str();
  app->add_option("--students", c.model.students, "number of students S")->capture_default_str();
  AddSwitch(app, "--ckd,!--no-ckd", c.use_ckd, "collaborative distillation");
  AddSwitch(app, "--saf,!--no-saf", c.use_saf, "SAF input filtering");
  AddSwitch(app, "--shared,!--no-shared", c.model.shared_backbone, "students share one backbone");
  app->add_option("--tokens", c.model.backbone.tokens, "Conformer tokens per sample")->capture_default_str();
  app->add_option("--layers", c.model.backbone.layers, "Conformer blocks L")->capture_default_str();
  app->add_option("--heads", c.model.backbone.heads, "attention heads n")->capture_default_str();
  app->add_option("--d-ff", c.model.backbone.d_ff, "feed-forward width")->capture_default_str();
  app->add_option("--kernel", c.model.backbone.kernel, "convolution kernel Ke")->capture_default_str();
  app->add_option("--hidden", c.model.hidden, "regression head width")->capture_default_str();
  app->add_option("--beta", c.step.weights.beta, "weight of the data loss")->capture_default_str();
  app->add_option("--epsilon", c.step.sinkhorn.epsilon, "Sinkhorn entropy weight")->capture_default_str();
  app->add_option("--sinkhorn-iter", c.step.sinkhorn.niter, "Sinkhorn iteration cap")->capture_default_str();
  app->add_option("--strong-sigma", c.step.augment.strong_noise_sigma, "strong view noise (x RMS)")
      ->capture_default_str();
  app->add_option("--weak-shift", c.step.augment.weak_shift_max, "weak view max subcarrier pan")
      ->capture_default_str();
  app->add_option("--saf-mu", c.saf.mu, "SAF step size")->capture_default_str();
  app->add_option("--saf-solver", f.solver, "minimum-norm or ridge")
      ->check(CLI::IsMember({"minimum-norm", "ridge"}))
      ->capture_default_str();
  app->add_option("--saf-lambda", c.saf.ridge_lambda, "ridge weight")->capture_default_str();
  app->add_option("--checkpoint-every", f.checkpoint_every, "checkpoint interval in epochs (0: final only)")
      ->capture_default_str();
}

train::TrainConfig Resolve(const TrainFlags &f, std::uint64_t seed, int k) {
  train::TrainConfig c = f.c;
  c.seed = seed;
  c.saf.solver = saf::ParseSolver(f.solver);
  c.model.backbone.k = k;
  c.Validate();
  return c;
}

// ---- run directory ------------------------------------------------------------

struct TrainOutcome {
  train::TrainResult result;
  eval::PckTable report;
};

/// run/config.json, run/metrics.jsonl, run/checkpoints/epoch_NNNN.pskc,
/// run/model.pskc, run/report.{txt,json} (test split).
TrainOutcome TrainRun(const Loaded &data, const fs::path &run, const train::TrainConfig &config,
                      int checkpoint_every) {
  fs::create_directories(run);
  WriteJson(run / "config.json", train::ToJson(config));
  std::ofstream metrics(run / "metrics.jsonl");
  Require(static_cast<bool>(metrics), ErrorKind::kIo, "cannot write metrics in " + run.string());
  const auto started = std::chrono::steady_clock::now();
  auto on_epoch = [&](const train::EpochMetrics &m, const ckd::CKDformerParams &params) {
    metrics << train::ToJson(m).dump() << '\n' << std::flush;
    std::string losses;
    for (const auto &s : m.students) losses += fmt::format(" {:.5f}", s.total);
    spdlog::info("epoch {}/{} loss{} ({:.1f}s)", m.epoch, config.epochs, losses,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    if (checkpoint_every > 0 && m.epoch % checkpoint_every == 0 && m.epoch < config.epochs) {
      train::SaveCheckpoint(run / "checkpoints" / fmt::format("epoch_{:04d}.pskc", m.epoch), params);
    }
  };
  TrainOutcome out{train::Train(data.train, config, on_epoch), {}};
  train::SaveCheckpoint(run / "model.pskc", out.result.params);
  out.report = train::Evaluate(data.test, out.result.params).table;
  WriteText(run / "report.txt", eval::Report(out.report));
  WriteJson(run / "report.json", eval::ToJson(out.report));
  return out;
}

ckd::CKDformerParams LoadModel(const std::string &checkpoint, const std::string &run) {
  if (!checkpoint.empty()) return train::LoadCheckpoint(checkpoint);
  Require(!run.empty(), ErrorKind::kConfig, "give --checkpoint or --run");
  return train::LoadCheckpoint(fs::path(run) / "model.pskc");
}

/// Global settings plus the section of the subcommand that ran.
std::string ConfigSnapshot(const CLI::App &app, const std::string &command) {
  std::istringstream in(app.config_to_str(true, false));
  std::string line, out;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    const auto dot = line.find('.');
    if (dot != std::string::npos && dot < eq && line.compare(0, dot, command) != 0) continue;
    out += line + "\n";
  }
  return out;
}

std::vector<std::string> ArgvOf(int argc, const char *const *argv) {
  return {argv, argv + argc};
}

}  // namespace

// ---- hashing -----------------------------------------------------------------

std::string Sha256Hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  Require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1,
          ErrorKind::kIo, "SHA-256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

std::string Sha256File(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  Require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1, ErrorKind::kIo,
          "SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

json HashArtifacts(const fs::path &path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto &e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    json entries = json::array();
    for (const auto &f : files) {
      entries.push_back({{"path", f.string()}, {"sha256", Sha256File(f)}});
    }
    return {{"path", path.string()}, {"files", entries}};
  }
  return {{"path", path.string()}, {"sha256", Sha256File(path)}};
}

// ---- dispatch ----------------------------------------------------------------

int Run(int argc, const char *const *argv) {
  const auto args = ArgvOf(argc, argv);
  CLI::App app{"WiFi CSI pose estimation: data, filtering, sensors, training, evaluation"};
  app.name("powerskel");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file (flags on the command line win)");
  app.set_version_flag("--version", "0.1.0");

  Global g;
  if (const char *env = std::getenv("POWERSKEL_DATA_DIR")) g.data_dir = env;
  app.add_option("--seed", g.seed, "seed for every random choice")->capture_default_str();
  app.add_option("--data-dir", g.data_dir, "default data root (env POWERSKEL_DATA_DIR)")
      ->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  auto data_path = [&](const std::string &given, const std::string &leaf) {
    return given.empty() ? fs::path(g.data_dir) / leaf : fs::path(given);
  };

  // gen
  auto *gen = app.add_subcommand("gen", "generate a synthetic dataset");
  synth::GeneratorConfig gc;
  int gen_m = 4, gen_f = 16;
  std::vector<std::string> motions{"reach-up", "swing-arm", "squat"};
  std::string gen_out;
  gen->add_option("--train", gc.n_train, "training samples")->capture_default_str();
  gen->add_option("--test", gc.n_test, "test samples")->capture_default_str();
  gen->add_option("--sensors", gen_m, "sensor count m")->capture_default_str();
  gen->add_option("--subcarriers", gen_f, "subcarriers per path f")->capture_default_str();
  gen->add_option("--noise", gc.noise_sigma, "CSI noise (x RMS)")->capture_default_str();
  gen->add_option("--drift", gc.subcarrier_drift, "max per-frame subcarrier offset")->capture_default_str();
  gen->add_option("--motions", motions, "motion templates")->delimiter(',')->capture_default_str();
  gen->add_option("--out", gen_out, "output directory [<data-dir>/synthetic]");

  // saf
  auto *safc = app.add_subcommand("saf", "filter a dataset with SAF");
  std::string saf_in, saf_out, saf_solver = "minimum-norm";
  saf::SAFConfig sc;
  safc->add_option("--in", saf_in, "dataset directory [<data-dir>/synthetic]");
  safc->add_option("--out", saf_out, "output directory [<data-dir>/filtered]");
  safc->add_option("--mu", sc.mu, "step size")->capture_default_str();
  safc->add_option("--solver", saf_solver, "minimum-norm or ridge")
      ->check(CLI::IsMember({"minimum-norm", "ridge"}))
      ->capture_default_str();
  safc->add_option("--lambda", sc.ridge_lambda, "ridge weight")->capture_default_str();
  AddSwitch(safc, "--shared-dictionary", sc.shared_dictionary_from_first_sample,
            "build the dictionary once from the first sample");

  // simulate
  auto *sim = app.add_subcommand("simulate", "replay a dataset split as UDP sensors");
  std::string sim_data, sim_split = "test", sim_out;
  netsim::Endpoint sim_to;
  double sim_rate = 30.0;
  std::size_t sim_limit = 0;
  sim->add_option("--data", sim_data, "dataset directory [<data-dir>/synthetic]");
  sim->add_option("--split", sim_split, "train or test")->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  sim->add_option("--rate", sim_rate, "frames per second per path")->capture_default_str();
  sim->add_option("--host", sim_to.host, "collector host")->capture_default_str();
  sim->add_option("--port", sim_to.port, "collector port")->capture_default_str();
  sim->add_option("--limit", sim_limit, "send only the first N samples (0: all)");
  sim->add_option("--out", sim_out, "report directory [<data-dir>/runs/simulate]");

  // collect
  auto *col = app.add_subcommand("collect", "receive sensor frames and reassemble CSI matrices");
  netsim::CollectorConfig cc;
  std::string col_topology, col_labels, col_split = "test", col_out;
  int col_m = 4, col_f = 16;
  std::size_t col_frames = 0;
  double col_duration = 0.0, col_idle = 5.0;
  int col_timeout = static_cast<int>(cc.timeout.count());
  std::int64_t col_skew = 33;
  col->add_option("--host", cc.endpoint.host, "bind address")->capture_default_str();
  col->add_option("--port", cc.endpoint.port, "UDP port")->capture_default_str();
  col->add_option("--topology-from", col_topology, "take sensors and f from this dataset");
  col->add_option("--sensors", col_m, "sensor count (synthetic ids)")->capture_default_str();
  col->add_option("--subcarriers", col_f, "subcarriers per path")->capture_default_str();
  col->add_option("--timeout-ms", col_timeout, "reassembly timeout")->capture_default_str();
  col->add_option("--frames", col_frames, "stop after N frames (0: no limit)");
  col->add_option("--duration", col_duration, "stop after S seconds (0: no limit)");
  col->add_option("--idle", col_idle, "stop S seconds after the last frame (0: never)")
      ->capture_default_str();
  col->add_option("--labels", col_labels, "dataset whose labels are paired with the frames");
  col->add_option("--split", col_split, "label split")->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  col->add_option("--max-skew-ms", col_skew, "pairing tolerance")->capture_default_str();
  col->add_option("--out", col_out, "output directory [<data-dir>/collected]");

  // train
  auto *trn = app.add_subcommand("train", "train a CKDformer model");
  TrainFlags tf;
  std::string trn_data, trn_run;
  trn->add_option("--data", trn_data, "dataset directory [<data-dir>/synthetic]");
  trn->add_option("--run", trn_run, "run directory [<data-dir>/runs/train]");
  AddTrainFlags(trn, tf);

  // eval
  auto *evl = app.add_subcommand("eval", "PCK table for a trained model");
  std::string ev_ckpt, ev_run, ev_data, ev_split = "test", ev_out;
  int ev_student = -1;
  evl->add_option("--checkpoint", ev_ckpt, "model file");
  evl->add_option("--run", ev_run, "run directory (uses run/model.pskc)");
  evl->add_option("--data", ev_data, "dataset directory [<data-dir>/synthetic]");
  evl->add_option("--split", ev_split, "train or test")->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  evl->add_option("--student", ev_student, "single student (-1: mean of all)")->capture_default_str();
  evl->add_option("--out", ev_out, "output directory [run dir or <data-dir>/runs/eval]");

  // render
  auto *rnd = app.add_subcommand("render", "SVG overlays of predictions on ground truth");
  std::string rn_ckpt, rn_run, rn_data, rn_split = "test", rn_out;
  std::size_t rn_index = 0, rn_count = 4;
  rnd->add_option("--checkpoint", rn_ckpt, "model file");
  rnd->add_option("--run", rn_run, "run directory (uses run/model.pskc)");
  rnd->add_option("--data", rn_data, "dataset directory [<data-dir>/synthetic]");
  rnd->add_option("--split", rn_split, "train or test")->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  rnd->add_option("--index", rn_index, "first sample")->capture_default_str();
  rnd->add_option("--count", rn_count, "number of samples")->capture_default_str();
  rnd->add_option("--out", rn_out, "output directory [<data-dir>/renders]");

  // ablate
  auto *abl = app.add_subcommand("ablate", "train and evaluate +-SAF x +-CKD");
  TrainFlags af;
  std::string ab_data, ab_out;
  abl->add_option("--data", ab_data, "dataset directory [<data-dir>/synthetic]");
  abl->add_option("--out", ab_out, "output directory [<data-dir>/runs/ablate]");
  AddTrainFlags(abl, af);

  if (argc >= 2 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "unknown subcommand '" << argv[1] << "'\n" << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  spdlog::set_level(spdlog::level::from_str(g.log_level));
  spdlog::set_default_logger(spdlog::default_logger());
  auto sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  RunManifest manifest(command, args, ConfigSnapshot(app, command), g.seed);

  try {
    if (command == "gen") {
      const fs::path out = data_path(gen_out, "synthetic");
      gc.seed = g.seed;
      gc.topology = SensingTopology::WithSyntheticIds(gen_m, gen_f);
      gc.motions.clear();
      for (const auto &m : motions) gc.motions.push_back(synth::ParseMotion(m));
      auto [tr, te] = synth::GenerateDataset(gc);
      DatasetManifest dm;
      dm.seed = gc.seed;
      dm.generator = synth::ToJson(gc);
      WriteDataset(out, dm, tr, te);
      spdlog::info("wrote {} train / {} test samples (m={}, f={}) to {}", tr.samples.size(),
                   te.samples.size(), gen_m, gen_f, out.string());
      manifest.Output(out);
      manifest.Write(out / "run_manifest.json");
    } else if (command == "saf") {
      const fs::path in = data_path(saf_in, "synthetic");
      const fs::path out = data_path(saf_out, "filtered");
      sc.solver = saf::ParseSolver(saf_solver);
      sc.Validate();
      const auto d = LoadDataset(in);
      DatasetManifest dm = d.manifest;
      dm.filtered = true;
      dm.saf = saf::ToJson(sc);
      WriteDataset(out, dm, saf::FilterDataset(d.train, sc), saf::FilterDataset(d.test, sc));
      spdlog::info("filtered {} into {}", in.string(), out.string());
      manifest.Input(in);
      manifest.Output(out);
      manifest.Write(out / "run_manifest.json");
    } else if (command == "simulate") {
      const fs::path in = data_path(sim_data, "synthetic");
      const fs::path out = data_path(sim_out, "runs/simulate");
      Dataset d = LoadSplit(in, sim_split);
      if (sim_limit > 0 && sim_limit < d.samples.size()) d.samples.resize(sim_limit);
      spdlog::info("sending {} samples x {} paths to {}:{} at {} Hz", d.samples.size(),
                   d.topology.e(), sim_to.host, sim_to.port, sim_rate);
      const auto report = netsim::RunSensors(d, sim_rate, sim_to);
      const json j = netsim::ToJson(report);
      std::cout << j.dump(2) << "\n";
      WriteJson(out / "send_report.json", j);
      manifest.Input(in);
      manifest.Output(out / "send_report.json");
      manifest.Write(out / "run_manifest.json");
    } else if (command == "collect") {
      const fs::path out = data_path(col_out, "collected");
      const SensingTopology topology = col_topology.empty()
                                           ? SensingTopology::WithSyntheticIds(col_m, col_f)
                                           : ReadManifest(col_topology).Topology();
      cc.timeout = std::chrono::milliseconds(col_timeout);
      netsim::Collector collector(topology, cc);
      spdlog::info("listening on {}:{} for {} sensors ({} paths x {} subcarriers)",
                   cc.endpoint.host, collector.port(), topology.m(), topology.e(), topology.f());
      g_interrupted.store(false);
      auto previous = std::signal(SIGINT, OnSignal);
      using Clock = std::chrono::steady_clock;
      const auto start = Clock::now();
      auto last = start;
      std::vector<netsim::CollectedFrame> frames;
      auto done = [&] {
        const auto now = Clock::now();
        return g_interrupted.load() || (col_frames > 0 && frames.size() >= col_frames) ||
               (col_duration > 0 && now - start >= std::chrono::duration<double>(col_duration)) ||
               (col_idle > 0 && !frames.empty() &&
                now - last >= std::chrono::duration<double>(col_idle));
      };
      while (!done()) {
        if (auto f = collector.Pop(std::chrono::milliseconds(50))) {
          frames.push_back(std::move(*f));
          last = Clock::now();
        }
      }
      collector.Stop();
      while (col_frames == 0 || frames.size() < col_frames) {
        auto f = collector.Pop(std::chrono::milliseconds(0));
        if (!f) break;
        frames.push_back(std::move(*f));
      }
      std::signal(SIGINT, previous);

      fs::create_directories(out);
      {
        std::ofstream fo(out / "frames.jsonl");
        for (const auto &f : frames) {
          const Vector flat = Flatten(f.frame.values);
          json j = {{"timestamp_ms", f.frame.timestamp_ms},
                    {"sequence_no", f.frame.sequence_no},
                    {"missing", f.missing},
                    {"csi", std::vector<double>(flat.begin(), flat.end())}};
          fo << j.dump() << '\n';
        }
      }
      const auto stats = collector.stats();
      json summary = {{"frames", frames.size()}, {"stats", netsim::ToJson(stats)}};
      manifest.Output(out / "frames.jsonl");
      if (!col_labels.empty()) {
        const Dataset labelled = LoadSplit(col_labels, col_split);
        std::vector<CsiFrame> csi;
        for (const auto &f : frames) csi.push_back(f.frame);
        std::vector<SkeletonFrame> labels;
        for (const auto &s : labelled.samples) {
          labels.push_back(SkeletonFromLabel(s.label, s.csi.timestamp_ms, &s.visibility));
        }
        const auto sync = Synchronize(csi, labels, col_skew);
        Dataset paired{topology, sync.samples, ParseSplit(col_split)};
        DatasetManifest dm = ReadManifest(col_labels);
        dm.n_train = paired.split == Split::kTrain ? paired.samples.size() : 0;
        dm.n_test = paired.split == Split::kTest ? paired.samples.size() : 0;
        const fs::path ds = out / "dataset";
        WriteManifest(ds, dm);
        WriteSplit(ds, paired);
        WriteSplit(ds, Dataset{topology, {}, paired.split == Split::kTrain ? Split::kTest : Split::kTrain});
        summary["paired"] = sync.samples.size();
        summary["dropped_csi"] = sync.dropped_csi;
        summary["dropped_labels"] = sync.dropped_labels;
        manifest.Input(col_labels);
        manifest.Output(ds);
      }
      std::cout << summary.dump(2) << "\n";
      WriteJson(out / "collect_report.json", summary);
      manifest.Output(out / "collect_report.json");
      manifest.Write(out / "run_manifest.json");
    } else if (command == "train") {
      const fs::path in = data_path(trn_data, "synthetic");
      const fs::path run = data_path(trn_run, "runs/train");
      const auto d = LoadDataset(in);
      const auto config = Resolve(tf, g.seed, d.train.topology.k());
      WriteText(run / "config.toml", ConfigSnapshot(app, command));
      const auto outcome = TrainRun(d, run, config, tf.checkpoint_every);
      std::cout << eval::Report(outcome.report);
      manifest.Input(in);
      manifest.Output(run);
      manifest.Write(run / "run_manifest.json");
    } else if (command == "eval") {
      const fs::path in = data_path(ev_data, "synthetic");
      const auto params = LoadModel(ev_ckpt, ev_run);
      const auto set = LoadSplit(in, ev_split);
      const auto e = train::Evaluate(set, params, {}, ev_student);
      const fs::path out = !ev_out.empty() ? fs::path(ev_out)
                           : !ev_run.empty() ? fs::path(ev_run) / ("eval_" + ev_split)
                                             : fs::path(g.data_dir) / "runs/eval";
      const std::string text = eval::Report(e.table);
      std::cout << text;
      WriteText(out / "report.txt", text);
      WriteJson(out / "report.json", eval::ToJson(e.table));
      manifest.Input(in);
      manifest.Input(ev_ckpt.empty() ? fs::path(ev_run) / "model.pskc" : fs::path(ev_ckpt));
      manifest.Output(out / "report.txt");
      manifest.Output(out / "report.json");
      manifest.Write(out / "run_manifest.json");
    } else if (command == "render") {
      const fs::path in = data_path(rn_data, "synthetic");
      const fs::path out = data_path(rn_out, "renders");
      const auto params = LoadModel(rn_ckpt, rn_run);
      const auto set = LoadSplit(in, rn_split);
      Require(rn_index < set.samples.size(), ErrorKind::kIndex,
              "index " + std::to_string(rn_index) + " past the end of the split");
      const auto end = std::min(set.samples.size(), rn_index + rn_count);
      Dataset slice{set.topology, {set.samples.begin() + static_cast<std::ptrdiff_t>(rn_index),
                                   set.samples.begin() + static_cast<std::ptrdiff_t>(end)},
                    set.split};
      // SAF state threads through the split, so filter the whole slice at once.
      const auto e = train::Evaluate(slice, params);
      fs::create_directories(out);
      for (std::size_t i = 0; i < slice.samples.size(); ++i) {
        const auto &s = slice.samples[i];
        const auto gt = SkeletonFromLabel(s.label, s.csi.timestamp_ms, &s.visibility);
        const auto pred = SkeletonFromLabel(e.predictions[i], s.csi.timestamp_ms);
        const auto path = out / fmt::format("{}_{:05d}.svg", rn_split, rn_index + i);
        WriteText(path, eval::RenderSvg(gt, pred, fmt::format("{} #{}  t={} ms", rn_split,
                                                               rn_index + i, s.csi.timestamp_ms)));
        manifest.Output(path);
      }
      spdlog::info("wrote {} overlays to {}", slice.samples.size(), out.string());
      manifest.Input(in);
      manifest.Write(out / "run_manifest.json");
    } else if (command == "ablate") {
      const fs::path in = data_path(ab_data, "synthetic");
      const fs::path out = data_path(ab_out, "runs/ablate");
      const auto d = LoadDataset(in);
      const auto base = Resolve(af, g.seed, d.train.topology.k());
      WriteText(out / "config.toml", ConfigSnapshot(app, command));
      std::ostringstream table;
      table << std::left << std::setw(6) << "SAF" << std::setw(6) << "CKD";
      for (double a : eval::PCKConfig{}.alphas) {
        table << std::right << std::setw(9) << fmt::format("PCK@{}", static_cast<int>(a * 100 + 0.5));
      }
      table << "\n" << std::fixed << std::setprecision(2);
      json rows = json::array();
      for (bool use_saf : {false, true}) {
        for (bool use_ckd : {false, true}) {
          auto c = base;
          c.use_saf = use_saf;
          c.use_ckd = use_ckd;
          // The baseline is a single student trained on clean inputs.
          if (!use_ckd) c.model.students = 1;
          const std::string name = fmt::format("{}saf_{}ckd", use_saf ? "+" : "-", use_ckd ? "+" : "-");
          spdlog::info("ablation run {}", name);
          const auto r = TrainRun(d, out / name, c, af.checkpoint_every);
          table << std::left << std::setw(6) << (use_saf ? "yes" : "no") << std::setw(6)
                << (use_ckd ? "yes" : "no");
          for (Eigen::Index a = 0; a < r.report.average.size(); ++a) {
            table << std::right << std::setw(9) << r.report.average[a];
          }
          table << "\n";
          rows.push_back({{"run", name},
                          {"use_saf", use_saf},
                          {"use_ckd", use_ckd},
                          {"students", c.model.students},
                          {"average", std::vector<double>(r.report.average.begin(),
                                                          r.report.average.end())}});
        }
      }
      std::cout << table.str();
      WriteText(out / "ablation.txt", table.str());
      WriteJson(out / "ablation.json", rows);
      manifest.Input(in);
      manifest.Output(out);
      manifest.Write(out / "run_manifest.json");
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfig ? 1 : 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int Run(const std::vector<std::string> &args) {
  std::vector<const char *> argv;
  for (const auto &a : args) argv.push_back(a.c_str());
  return Run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace powerskel::cli
