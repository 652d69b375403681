#include "powerskel/netsim.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>

#include <spdlog/spdlog.h>

#include "powerskel/error.hpp"

namespace powerskel::netsim {

namespace {

using Clock = std::chrono::steady_clock;

template <class T>
void PutLe(std::vector<std::uint8_t> &out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <class T>
T GetLe(const std::uint8_t *p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

std::string ErrnoText() { return std::strerror(errno); }

class Socket {
 public:
  Socket() : fd_(::socket(AF_INET, SOCK_DGRAM, 0)) {
    Require(fd_ >= 0, ErrorKind::kTransport, "socket: " + ErrnoText());
  }
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket &) = delete;
  Socket &operator=(const Socket &) = delete;
  int fd() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }

 private:
  int fd_;
};

sockaddr_in Resolve(const Endpoint &endpoint) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo *res = nullptr;
  const int rc = ::getaddrinfo(endpoint.host.c_str(), nullptr, &hints, &res);
  Require(rc == 0 && res != nullptr, ErrorKind::kTransport,
          "cannot resolve '" + endpoint.host + "': " + ::gai_strerror(rc));
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(endpoint.port);
  return addr;
}

}  // namespace

// ---- wire format -----------------------------------------------------------

DeviceId ParseDeviceId(std::string_view mac) {
  DeviceId id{};
  Require(mac.size() == 17, ErrorKind::kConfig, "bad device id '" + std::string(mac) + "'");
  for (std::size_t i = 0; i < 6; ++i) {
    const auto part = mac.substr(3 * i, 2);
    Require(i == 5 || mac[3 * i + 2] == ':', ErrorKind::kConfig,
            "bad device id '" + std::string(mac) + "'");
    unsigned value = 0;
    for (char c : part) {
      value <<= 4;
      if (c >= '0' && c <= '9') value |= static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f') value |= static_cast<unsigned>(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') value |= static_cast<unsigned>(c - 'A' + 10);
      else Fail(ErrorKind::kConfig, "bad device id '" + std::string(mac) + "'");
    }
    id[i] = static_cast<std::uint8_t>(value);
  }
  return id;
}

std::string FormatDeviceId(const DeviceId &id) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < 6; ++i) {
    if (i) out += ':';
    out += kHex[id[i] >> 4];
    out += kHex[id[i] & 0xF];
  }
  return out;
}

std::vector<std::uint8_t> EncodeFrame(const WireFrame &frame) {
  Require(frame.payload.size() == frame.f, ErrorKind::kEncode,
          "payload has " + std::to_string(frame.payload.size()) + " values but f=" +
              std::to_string(frame.f));
  Require(frame.tx != frame.rx, ErrorKind::kEncode,
          "sensor " + FormatDeviceId(frame.tx) + " cannot sniff itself");
  std::vector<std::uint8_t> out;
  out.reserve(PacketSize(frame.f));
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(kWireVersion);
  out.insert(out.end(), frame.tx.begin(), frame.tx.end());
  out.insert(out.end(), frame.rx.begin(), frame.rx.end());
  PutLe(out, frame.sequence_no);
  PutLe(out, frame.timestamp_ms);
  PutLe(out, frame.f);
  for (float v : frame.payload) PutLe(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

WireFrame DecodeFrame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw DecodeError(DecodeReason::kTruncated, std::to_string(bytes.size()) +
                                                    " bytes, header needs " +
                                                    std::to_string(kHeaderBytes));
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw DecodeError(DecodeReason::kMagic, "bad magic");
  }
  if (bytes[4] != kWireVersion) {
    throw DecodeError(DecodeReason::kVersion, "version " + std::to_string(bytes[4]));
  }
  WireFrame frame;
  const std::uint8_t *p = bytes.data() + 5;
  std::copy(p, p + 6, frame.tx.begin());
  std::copy(p + 6, p + 12, frame.rx.begin());
  frame.sequence_no = GetLe<std::uint32_t>(p + 12);
  frame.timestamp_ms = GetLe<std::uint64_t>(p + 16);
  frame.f = GetLe<std::uint16_t>(p + 24);
  const std::size_t expected = PacketSize(frame.f);
  if (bytes.size() < expected) {
    throw DecodeError(DecodeReason::kTruncated, std::to_string(bytes.size()) + " bytes, f=" +
                                                    std::to_string(frame.f) + " needs " +
                                                    std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw DecodeError(DecodeReason::kLength, std::to_string(bytes.size() - expected) +
                                                 " trailing bytes");
  }
  if (frame.tx == frame.rx) {
    throw DecodeError(DecodeReason::kSelfPath, FormatDeviceId(frame.tx) + " sniffing itself");
  }
  frame.payload.resize(frame.f);
  for (std::size_t i = 0; i < frame.f; ++i) {
    frame.payload[i] = std::bit_cast<float>(GetLe<std::uint32_t>(bytes.data() + kHeaderBytes + 4 * i));
    if (!std::isfinite(frame.payload[i])) {
      throw DecodeError(DecodeReason::kNonFinite, "subcarrier " + std::to_string(i));
    }
  }
  return frame;
}

// ---- sensors -----------------------------------------------------------------

std::vector<WireFrame> FramesForSample(const CsiFrame &frame, const SensingTopology &topology) {
  ValidateFrame(frame, topology);
  Require(frame.timestamp_ms >= 0, ErrorKind::kEncode, "negative timestamp");
  std::vector<WireFrame> out;
  out.reserve(static_cast<std::size_t>(topology.e()));
  const auto &paths = topology.paths();
  for (int p = 0; p < topology.e(); ++p) {
    WireFrame w;
    w.tx = ParseDeviceId(paths[p].tx);
    w.rx = ParseDeviceId(paths[p].rx);
    w.sequence_no = frame.sequence_no;
    w.timestamp_ms = static_cast<std::uint64_t>(frame.timestamp_ms);
    w.f = static_cast<std::uint16_t>(topology.f());
    w.payload.resize(w.f);
    for (int s = 0; s < topology.f(); ++s) w.payload[s] = static_cast<float>(frame.values(p, s));
    out.push_back(std::move(w));
  }
  return out;
}

nlohmann::json ToJson(const SendReport &r) {
  return {{"samples", r.samples},
          {"frames_sent", r.frames_sent},
          {"frames_per_path", r.frames_per_path},
          {"elapsed_s", r.elapsed_s},
          {"spacing_ms", {{"mean", r.spacing_mean_ms}, {"min", r.spacing_min_ms}, {"max", r.spacing_max_ms}}}};
}

SendReport RunSensors(const Dataset &dataset, double rate_hz, const Endpoint &endpoint) {
  Require(rate_hz > 0.0, ErrorKind::kConfig, "rate_hz must be positive");
  dataset.Validate();
  const sockaddr_in addr = Resolve(endpoint);
  const auto &topology = dataset.topology;
  const auto &paths = topology.paths();
  const int m = topology.m();

  // Encode everything up front so the sender threads only pace and send.
  std::vector<std::vector<std::vector<std::uint8_t>>> packets(dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    for (const auto &w : FramesForSample(dataset.samples[i].csi, topology)) {
      packets[i].push_back(EncodeFrame(w));
    }
  }

  SendReport report;
  report.samples = dataset.samples.size();
  report.frames_per_path.assign(static_cast<std::size_t>(topology.e()), 0);
  std::vector<std::vector<Clock::time_point>> send_times(static_cast<std::size_t>(m));
  std::vector<std::string> errors(static_cast<std::size_t>(m));
  std::mutex report_mu;

  const auto period = std::chrono::duration<double>(1.0 / rate_hz);
  const auto start = Clock::now() + std::chrono::milliseconds(20);
  auto sensor = [&](int r) {
    try {
      Socket sock;
      Require(::connect(sock.fd(), reinterpret_cast<const sockaddr *>(&addr), sizeof(addr)) == 0,
              ErrorKind::kTransport, "connect: " + ErrnoText());
      std::vector<int> mine;
      for (int p = 0; p < topology.e(); ++p) {
        if (paths[p].rx == topology.sensor_ids()[r]) mine.push_back(p);
      }
      std::vector<std::size_t> sent(static_cast<std::size_t>(topology.e()), 0);
      auto &times = send_times[static_cast<std::size_t>(r)];
      times.reserve(packets.size());
      for (std::size_t i = 0; i < packets.size(); ++i) {
        std::this_thread::sleep_until(
            start + std::chrono::duration_cast<Clock::duration>(period * static_cast<double>(i)));
        times.push_back(Clock::now());
        for (int p : mine) {
          const auto &bytes = packets[i][static_cast<std::size_t>(p)];
          const auto n = ::send(sock.fd(), bytes.data(), bytes.size(), 0);
          Require(n == static_cast<ssize_t>(bytes.size()), ErrorKind::kTransport,
                  "send to " + endpoint.host + ":" + std::to_string(endpoint.port) + ": " +
                      ErrnoText());
          ++sent[static_cast<std::size_t>(p)];
        }
      }
      std::lock_guard lock(report_mu);
      for (std::size_t p = 0; p < sent.size(); ++p) report.frames_per_path[p] += sent[p];
    } catch (const std::exception &e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    }
  };

  std::vector<std::thread> threads;
  for (int r = 0; r < m; ++r) threads.emplace_back(sensor, r);
  for (auto &t : threads) t.join();
  for (const auto &e : errors) {
    if (!e.empty()) Fail(ErrorKind::kTransport, e);
  }

  for (auto n : report.frames_per_path) report.frames_sent += n;
  const auto &times = send_times.front();
  if (!times.empty()) {
    report.elapsed_s = std::chrono::duration<double>(times.back() - start).count();
  }
  if (times.size() >= 2) {
    double sum = 0.0, lo = 1e300, hi = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double gap = std::chrono::duration<double, std::milli>(times[i] - times[i - 1]).count();
      sum += gap;
      lo = std::min(lo, gap);
      hi = std::max(hi, gap);
    }
    report.spacing_mean_ms = sum / static_cast<double>(times.size() - 1);
    report.spacing_min_ms = lo;
    report.spacing_max_ms = hi;
  }
  return report;
}

// ---- reassembly ----------------------------------------------------------

bool CollectedFrame::complete() const {
  return std::none_of(missing.begin(), missing.end(), [](bool b) { return b; });
}

nlohmann::json ToJson(const CollectorStats &s) {
  return {{"packets", s.packets},
          {"decode_errors", s.decode_errors},
          {"decode_errors_by_reason", s.decode_errors_by_reason},
          {"unknown_path", s.unknown_path},
          {"wrong_f", s.wrong_f},
          {"duplicates", s.duplicates},
          {"late", s.late},
          {"complete_frames", s.complete_frames},
          {"partial_frames", s.partial_frames},
          {"zero_filled_rows", s.zero_filled_rows},
          {"queue_full_waits", s.queue_full_waits}};
}

Reassembler::Reassembler(SensingTopology topology, std::chrono::milliseconds timeout)
    : topology_(std::move(topology)), timeout_(timeout) {
  const auto &paths = topology_.paths();
  for (int p = 0; p < topology_.e(); ++p) {
    path_index_[std::make_pair(ParseDeviceId(paths[p].tx), ParseDeviceId(paths[p].rx))] = p;
  }
}

void Reassembler::CountDecodeError(const DecodeError &error) {
  ++stats_.packets;
  ++stats_.decode_errors;
  ++stats_.decode_errors_by_reason[std::string(ToString(error.reason()))];
}

CollectedFrame Reassembler::Emit(std::uint64_t timestamp, Pending &&p) {
  CollectedFrame out;
  out.frame.timestamp_ms = static_cast<std::int64_t>(timestamp);
  out.frame.sequence_no = p.sequence_no;
  out.frame.values = std::move(p.values);
  out.missing.resize(p.have.size());
  for (std::size_t i = 0; i < p.have.size(); ++i) out.missing[i] = !p.have[i];
  const std::size_t gaps = p.have.size() - p.count;
  if (gaps == 0) {
    ++stats_.complete_frames;
  } else {
    ++stats_.partial_frames;
    stats_.zero_filled_rows += gaps;
  }
  emitted_.insert(timestamp);
  // Bounded memory for late-packet detection.
  while (emitted_.size() > 8192) emitted_.erase(emitted_.begin());
  return out;
}

std::vector<CollectedFrame> Reassembler::Push(const WireFrame &frame, Clock::time_point now) {
  ++stats_.packets;
  std::vector<CollectedFrame> out = Expire(now);
  const auto it = path_index_.find(std::make_pair(frame.tx, frame.rx));
  if (it == path_index_.end()) {
    ++stats_.unknown_path;
    return out;
  }
  if (frame.f != topology_.f()) {
    ++stats_.wrong_f;
    return out;
  }
  if (emitted_.contains(frame.timestamp_ms)) {
    ++stats_.late;
    return out;
  }
  auto [slot, inserted] = pending_.try_emplace(frame.timestamp_ms);
  Pending &p = slot->second;
  if (inserted) {
    p.first_seen = now;
    p.values = Matrix::Zero(topology_.e(), topology_.f());
    p.have.assign(static_cast<std::size_t>(topology_.e()), false);
    p.sequence_no = frame.sequence_no;
  }
  const auto row = static_cast<std::size_t>(it->second);
  if (p.have[row]) {
    ++stats_.duplicates;
    return out;
  }
  for (int s = 0; s < topology_.f(); ++s) p.values(it->second, s) = frame.payload[s];
  p.have[row] = true;
  ++p.count;
  if (p.count == p.have.size()) {
    out.push_back(Emit(frame.timestamp_ms, std::move(p)));
    pending_.erase(slot);
  }
  return out;
}

std::vector<CollectedFrame> Reassembler::Expire(Clock::time_point now) {
  std::vector<CollectedFrame> out;
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (now - it->second.first_seen >= timeout_) {
      out.push_back(Emit(it->first, std::move(it->second)));
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

std::vector<CollectedFrame> Reassembler::Flush() {
  std::vector<CollectedFrame> out;
  for (auto &[ts, p] : pending_) out.push_back(Emit(ts, std::move(p)));
  pending_.clear();
  return out;
}

// ---- collector -----------------------------------------------------------

Collector::Collector(SensingTopology topology, CollectorConfig config)
    : config_(std::move(config)), reassembler_(std::move(topology), config_.timeout) {
  Require(config_.queue_capacity >= 1, ErrorKind::kConfig, "queue capacity must be >= 1");
  Socket sock;
  const int one = 1;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const int rcvbuf = 4 << 20;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof(rcvbuf));
  sockaddr_in addr = Resolve(config_.endpoint);
  Require(::bind(sock.fd(), reinterpret_cast<const sockaddr *>(&addr), sizeof(addr)) == 0,
          ErrorKind::kTransport,
          "bind " + config_.endpoint.host + ":" + std::to_string(config_.endpoint.port) + ": " +
              ErrnoText());
  socklen_t len = sizeof(addr);
  ::getsockname(sock.fd(), reinterpret_cast<sockaddr *>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  fd_ = sock.release();
  thread_ = std::thread([this] { Loop(); });
}

Collector::~Collector() {
  Stop();
  if (fd_ >= 0) ::close(fd_);
}

void Collector::Enqueue(std::vector<CollectedFrame> frames) {
  for (auto &f : frames) queue_.push_back(std::move(f));
  if (!frames.empty()) not_empty_.notify_all();
}

void Collector::Loop() {
  std::vector<std::uint8_t> buf(65536);
  pollfd pfd{fd_, POLLIN, 0};
  while (!stop_.load()) {
    const int ready = ::poll(&pfd, 1, 10);
    std::vector<CollectedFrame> out;
    std::unique_lock lock(mu_);
    if (ready > 0 && (pfd.revents & POLLIN)) {
      const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
      if (n >= 0) {
        try {
          const auto frame = DecodeFrame({buf.data(), static_cast<std::size_t>(n)});
          out = reassembler_.Push(frame, Clock::now());
        } catch (const DecodeError &e) {
          reassembler_.CountDecodeError(e);
        }
      }
    } else {
      out = reassembler_.Expire(Clock::now());
    }
    for (auto &f : out) {
      if (queue_.size() >= config_.queue_capacity) {
        ++queue_full_waits_;
        not_full_.wait(lock, [&] { return queue_.size() < config_.queue_capacity || stop_.load(); });
      }
      queue_.push_back(std::move(f));
      not_empty_.notify_all();
    }
  }
  std::lock_guard lock(mu_);
  Enqueue(reassembler_.Flush());
  finished_ = true;
  not_empty_.notify_all();
}

std::optional<CollectedFrame> Collector::Pop(std::chrono::milliseconds wait) {
  std::unique_lock lock(mu_);
  not_empty_.wait_for(lock, wait, [&] { return !queue_.empty() || finished_; });
  if (queue_.empty()) return std::nullopt;
  CollectedFrame f = std::move(queue_.front());
  queue_.pop_front();
  not_full_.notify_all();
  return f;
}

void Collector::Stop() {
  if (!thread_.joinable()) return;
  stop_.store(true);
  not_full_.notify_all();
  thread_.join();
}

CollectorStats Collector::stats() const {
  std::lock_guard lock(mu_);
  CollectorStats s = reassembler_.stats();
  s.queue_full_waits = queue_full_waits_;
  return s;
}

}  // namespace powerskel::netsim
