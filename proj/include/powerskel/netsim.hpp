#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "powerskel/datamodel.hpp"
#include "powerskel/error.hpp"

namespace powerskel::netsim {

// ---- wire format -----------------------------------------------------------
// magic "PSKW" | version u8 | tx 6B | rx 6B | seq u32 | timestamp_ms u64 |
// f u16 | f x float32. Integers and floats little-endian.

inline constexpr std::array<std::uint8_t, 4> kMagic = {'P', 'S', 'K', 'W'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderBytes = 31;
inline constexpr std::uint16_t kDefaultPort = 5566;

using DeviceId = std::array<std::uint8_t, 6>;

/// "aa:bb:cc:dd:ee:ff" <-> bytes. Throws kConfig on malformed text.
DeviceId ParseDeviceId(std::string_view mac);
std::string FormatDeviceId(const DeviceId &id);

struct WireFrame {
  DeviceId tx{};
  DeviceId rx{};
  std::uint32_t sequence_no = 0;
  std::uint64_t timestamp_ms = 0;
  std::uint16_t f = 0;
  std::vector<float> payload;

  friend bool operator==(const WireFrame &, const WireFrame &) = default;
};

constexpr std::size_t PacketSize(std::size_t f) { return kHeaderBytes + 4 * f; }

/// Throws Error(kEncode) when payload.size() != f or tx == rx.
std::vector<std::uint8_t> EncodeFrame(const WireFrame &frame);
/// Throws DecodeError naming the reason; never reads past `bytes`.
WireFrame DecodeFrame(std::span<const std::uint8_t> bytes);

// ---- endpoints and sensors ---------------------------------------------------

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
};

/// One UDP datagram per sniffing path per sample.
std::vector<WireFrame> FramesForSample(const CsiFrame &frame, const SensingTopology &topology);

struct SendReport {
  std::size_t samples = 0;
  std::size_t frames_sent = 0;
  std::vector<std::size_t> frames_per_path;  // topology path order
  double elapsed_s = 0.0;
  /// Gaps between consecutive sample send times on the first sensor.
  double spacing_mean_ms = 0.0;
  double spacing_min_ms = 0.0;
  double spacing_max_ms = 0.0;
};

nlohmann::json ToJson(const SendReport &report);

/// Replays the dataset at rate_hz: one thread per sensor, each sending the
/// paths it receives on (tx -> this sensor) for every sample, all paced
/// against a common start time. Throws kTransport when the endpoint cannot
/// be resolved or a send fails.
SendReport RunSensors(const Dataset &dataset, double rate_hz, const Endpoint &endpoint);

// ---- reassembly ----------------------------------------------------------

struct CollectedFrame {
  CsiFrame frame;
  std::vector<bool> missing;  // per path, true where the row was zero-filled
  bool complete() const;
};

struct CollectorStats {
  std::size_t packets = 0;
  std::size_t decode_errors = 0;
  std::map<std::string, std::size_t> decode_errors_by_reason;
  std::size_t unknown_path = 0;
  std::size_t wrong_f = 0;
  std::size_t duplicates = 0;
  std::size_t late = 0;  // arrived after their timestamp was emitted
  std::size_t complete_frames = 0;
  std::size_t partial_frames = 0;
  std::size_t zero_filled_rows = 0;
  std::size_t queue_full_waits = 0;
};

nlohmann::json ToJson(const CollectorStats &stats);

/// Socket-free core of the collector: groups path frames by timestamp and
/// emits a CSI matrix once every path arrived or the timestamp's first
/// packet is older than the timeout.
class Reassembler {
 public:
  using Clock = std::chrono::steady_clock;

  Reassembler(SensingTopology topology, std::chrono::milliseconds timeout);

  std::vector<CollectedFrame> Push(const WireFrame &frame, Clock::time_point now);
  std::vector<CollectedFrame> Expire(Clock::time_point now);
  /// Emits every pending timestamp, zero-filling what is missing.
  std::vector<CollectedFrame> Flush();
  void CountDecodeError(const DecodeError &error);

  const CollectorStats &stats() const { return stats_; }
  std::size_t pending() const { return pending_.size(); }

 private:
  struct Pending {
    Clock::time_point first_seen;
    Matrix values;
    std::vector<bool> have;
    std::size_t count = 0;
    std::uint32_t sequence_no = 0;
  };

  CollectedFrame Emit(std::uint64_t timestamp, Pending &&p);

  SensingTopology topology_;
  std::chrono::milliseconds timeout_;
  std::map<std::pair<DeviceId, DeviceId>, int> path_index_;
  std::map<std::uint64_t, Pending> pending_;
  std::set<std::uint64_t> emitted_;
  CollectorStats stats_;
};

struct CollectorConfig {
  Endpoint endpoint{"0.0.0.0", kDefaultPort};
  std::chrono::milliseconds timeout{200};
  std::size_t queue_capacity = 4096;
};

/// UDP ingestion server: one receive thread feeding a Reassembler, completed
/// frames handed to consumers through a bounded queue. The receive loop
/// blocks while the queue is full.
class Collector {
 public:
  Collector(SensingTopology topology, CollectorConfig config);
  ~Collector();
  Collector(const Collector &) = delete;
  Collector &operator=(const Collector &) = delete;

  /// Port actually bound (useful when 0 was requested).
  std::uint16_t port() const { return port_; }

  /// Waits up to `wait` for the next frame.
  std::optional<CollectedFrame> Pop(std::chrono::milliseconds wait);
  /// Stops receiving, flushes pending timestamps into the queue.
  void Stop();
  CollectorStats stats() const;

 private:
  void Loop();
  /// Caller holds mu_.
  void Enqueue(std::vector<CollectedFrame> frames);

  CollectorConfig config_;
  Reassembler reassembler_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  mutable std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<CollectedFrame> queue_;
  bool finished_ = false;
  std::size_t queue_full_waits_ = 0;
  std::thread thread_;
};

}  // namespace powerskel::netsim
