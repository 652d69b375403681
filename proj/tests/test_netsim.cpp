#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include "powerskel/error.hpp"
#include "powerskel/netsim.hpp"
#include "powerskel/random.hpp"
#include "powerskel/synth.hpp"

using namespace powerskel;
using namespace powerskel::netsim;
using namespace std::chrono_literals;

namespace {

// Hand-assembled packet following the documented byte layout.
std::vector<std::uint8_t> OraclePacket(const WireFrame &w) {
  std::vector<std::uint8_t> b{'P', 'S', 'K', 'W', 1};
  b.insert(b.end(), w.tx.begin(), w.tx.end());
  b.insert(b.end(), w.rx.begin(), w.rx.end());
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(w.sequence_no >> (8 * i)));
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(w.timestamp_ms >> (8 * i)));
  for (int i = 0; i < 2; ++i) b.push_back(static_cast<std::uint8_t>(w.f >> (8 * i)));
  for (float v : w.payload) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  return b;
}

WireFrame RandomFrame(Rng &rng) {
  WireFrame w;
  for (auto &b : w.tx) b = static_cast<std::uint8_t>(rng.UniformInt(0, 255));
  w.rx = w.tx;
  w.rx[5] ^= static_cast<std::uint8_t>(rng.UniformInt(1, 255));
  w.sequence_no = static_cast<std::uint32_t>(rng.UniformInt(0, 0xFFFFFFFFLL));
  w.timestamp_ms = static_cast<std::uint64_t>(rng.UniformInt(0, 1LL << 50));
  w.f = static_cast<std::uint16_t>(rng.UniformInt(0, 64));
  for (int i = 0; i < w.f; ++i) w.payload.push_back(static_cast<float>(rng.Normal() * 1e3));
  return w;
}

const SensingTopology kTopo = SensingTopology::WithSyntheticIds(4, 16);

WireFrame PathFrame(int p, std::uint64_t ts, float fill) {
  WireFrame w;
  w.tx = ParseDeviceId(kTopo.paths()[p].tx);
  w.rx = ParseDeviceId(kTopo.paths()[p].rx);
  w.timestamp_ms = ts;
  w.sequence_no = static_cast<std::uint32_t>(ts / 33);
  w.f = 16;
  w.payload.assign(16, fill + static_cast<float>(p));
  return w;
}

}  // namespace

TEST_CASE("device ids") {
  const auto id = ParseDeviceId("02:00:0a:FF:00:01");
  CHECK(id == DeviceId{0x02, 0x00, 0x0a, 0xff, 0x00, 0x01});
  CHECK(FormatDeviceId(id) == "02:00:0a:ff:00:01");
  CHECK_THROWS_AS(ParseDeviceId("02:00:0a:FF:00"), Error);
  CHECK_THROWS_AS(ParseDeviceId("02-00-0a-FF-00-01"), Error);
  CHECK_THROWS_AS(ParseDeviceId("02:00:0a:FG:00:01"), Error);
}

TEST_CASE("encode matches the byte layout") {
  CHECK(PacketSize(51) == 235);
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    const auto w = RandomFrame(rng);
    const auto bytes = EncodeFrame(w);
    CHECK(bytes == OraclePacket(w));
    CHECK(bytes.size() == PacketSize(w.f));
    CHECK(DecodeFrame(bytes) == w);
  }
}

TEST_CASE("encode preconditions") {
  WireFrame w = PathFrame(0, 0, 1.0f);
  w.payload.pop_back();
  CHECK_THROWS_AS(EncodeFrame(w), Error);
  w = PathFrame(0, 0, 1.0f);
  w.rx = w.tx;
  try {
    EncodeFrame(w);
    FAIL("expected an encode error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kEncode);
  }
}

TEST_CASE("decode errors are typed") {
  const auto good = EncodeFrame(PathFrame(3, 99, 0.5f));
  auto reason = [](std::vector<std::uint8_t> bytes) {
    try {
      DecodeFrame(bytes);
    } catch (const DecodeError &e) {
      return e.reason();
    }
    FAIL("decoded malformed bytes");
    return DecodeReason::kTruncated;
  };
  CHECK(reason({}) == DecodeReason::kTruncated);
  CHECK(reason({good.begin(), good.begin() + 30}) == DecodeReason::kTruncated);
  CHECK(reason({good.begin(), good.end() - 1}) == DecodeReason::kTruncated);
  auto longer = good;
  longer.push_back(0);
  CHECK(reason(longer) == DecodeReason::kLength);
  auto magic = good;
  magic[0] = 'X';
  CHECK(reason(magic) == DecodeReason::kMagic);
  auto version = good;
  version[4] = 2;
  CHECK(reason(version) == DecodeReason::kVersion);
  auto self = good;
  std::copy(self.begin() + 5, self.begin() + 11, self.begin() + 11);
  CHECK(reason(self) == DecodeReason::kSelfPath);
  auto nan = good;
  const std::uint32_t qnan = 0x7FC00000u;
  std::memcpy(nan.data() + kHeaderBytes + 8, &qnan, 4);
  CHECK(reason(nan) == DecodeReason::kNonFinite);
}

TEST_CASE("fuzzed bytes only raise decode errors") {
  Rng rng(5);
  const auto good = EncodeFrame(PathFrame(1, 7, 2.0f));
  int decoded = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<std::uint8_t> bytes;
    if (i % 2 == 0) {
      bytes.resize(static_cast<std::size_t>(rng.UniformInt(0, 300)));
      for (auto &b : bytes) b = static_cast<std::uint8_t>(rng.UniformInt(0, 255));
      if (i % 4 == 0 && bytes.size() >= 5) std::copy(good.begin(), good.begin() + 5, bytes.begin());
    } else {
      bytes = good;
      const auto flips = rng.UniformInt(1, 4);
      for (int j = 0; j < flips; ++j) {
        bytes[static_cast<std::size_t>(rng.UniformInt(0, static_cast<std::int64_t>(bytes.size()) - 1))] ^=
            static_cast<std::uint8_t>(rng.UniformInt(1, 255));
      }
      if (rng.Uniform() < 0.3) bytes.resize(static_cast<std::size_t>(rng.UniformInt(0, 120)));
    }
    try {
      DecodeFrame(bytes);
      ++decoded;
    } catch (const DecodeError &) {
    }
  }
  CHECK(decoded > 0);
}

TEST_CASE("frames for a sample follow path order") {
  synth::GeneratorConfig g;
  g.n_train = 2;
  g.n_test = 1;
  const auto data = synth::GenerateDataset(g).first;
  const auto frames = FramesForSample(data.samples[1].csi, data.topology);
  REQUIRE(frames.size() == 12);
  for (int p = 0; p < 12; ++p) {
    CHECK(FormatDeviceId(frames[p].tx) == data.topology.paths()[p].tx);
    CHECK(FormatDeviceId(frames[p].rx) == data.topology.paths()[p].rx);
    CHECK(frames[p].timestamp_ms == static_cast<std::uint64_t>(data.samples[1].csi.timestamp_ms));
    for (int s = 0; s < 16; ++s) {
      CHECK(static_cast<double>(frames[p].payload[s]) == data.samples[1].csi.values(p, s));
    }
  }
}

TEST_CASE("reassembler") {
  const auto t0 = Reassembler::Clock::now();

  SUBCASE("complete frame, any arrival order") {
    Reassembler r(kTopo, 200ms);
    std::vector<CollectedFrame> out;
    for (int p : {5, 0, 11, 3, 1, 2, 4, 6, 7, 10, 9, 8}) {
      auto got = r.Push(PathFrame(p, 66, 1.0f), t0);
      out.insert(out.end(), got.begin(), got.end());
    }
    REQUIRE(out.size() == 1);
    CHECK(out[0].complete());
    CHECK(out[0].frame.timestamp_ms == 66);
    for (int p = 0; p < 12; ++p) CHECK(out[0].frame.values(p, 3) == 1.0 + p);
    CHECK(r.stats().complete_frames == 1);
    CHECK(r.pending() == 0);
  }

  SUBCASE("timeout zero-fills the missing path") {
    Reassembler r(kTopo, 200ms);
    for (int p = 0; p < 12; ++p) {
      if (p != 7) CHECK(r.Push(PathFrame(p, 33, 2.0f), t0 + 10ms).empty());
    }
    CHECK(r.Expire(t0 + 100ms).empty());
    const auto out = r.Expire(t0 + 210ms);
    REQUIRE(out.size() == 1);
    CHECK_FALSE(out[0].complete());
    for (int p = 0; p < 12; ++p) CHECK(out[0].missing[p] == (p == 7));
    CHECK(out[0].frame.values.row(7).isZero(0.0));
    CHECK(out[0].frame.values(6, 0) == 8.0);
    CHECK(r.stats().partial_frames == 1);
    CHECK(r.stats().zero_filled_rows == 1);

    // The straggler arrives after its timestamp was emitted.
    CHECK(r.Push(PathFrame(7, 33, 2.0f), t0 + 220ms).empty());
    CHECK(r.stats().late == 1);
  }

  SUBCASE("interleaved timestamps") {
    Reassembler r(kTopo, 200ms);
    std::vector<std::uint64_t> order;
    for (int p = 0; p < 12; ++p) {
      for (std::uint64_t ts : {100, 133}) {
        // 133 always lands first for odd paths.
        const std::uint64_t t = (p % 2) ? 233 - ts : ts;
        for (auto &f : r.Push(PathFrame(p, t, static_cast<float>(t)), t0)) {
          order.push_back(static_cast<std::uint64_t>(f.frame.timestamp_ms));
          CHECK(f.complete());
          CHECK(f.frame.values(11, 0) == static_cast<double>(t) + 11.0);
        }
      }
    }
    // Path 11 is odd, so timestamp 133 completes first.
    CHECK(order == std::vector<std::uint64_t>{133, 100});
  }

  SUBCASE("duplicates, unknown paths and wrong f are counted") {
    Reassembler r(kTopo, 200ms);
    r.Push(PathFrame(0, 0, 1.0f), t0);
    r.Push(PathFrame(0, 0, 9.0f), t0);
    WireFrame stranger = PathFrame(1, 0, 1.0f);
    stranger.tx[0] = 0xAA;
    r.Push(stranger, t0);
    WireFrame wide = PathFrame(2, 0, 1.0f);
    wide.f = 17;
    wide.payload.push_back(0.0f);
    r.Push(wide, t0);
    CHECK(r.stats().duplicates == 1);
    CHECK(r.stats().unknown_path == 1);
    CHECK(r.stats().wrong_f == 1);
    CHECK(r.stats().packets == 4);
    const auto flushed = r.Flush();
    REQUIRE(flushed.size() == 1);
    CHECK(flushed[0].frame.values(0, 0) == 1.0);
    CHECK(r.stats().zero_filled_rows == 11);
  }
}

TEST_CASE("loopback replay") {
  synth::GeneratorConfig g;
  g.seed = 12;
  g.n_train = 10;
  g.n_test = 1;
  const auto data = synth::GenerateDataset(g).first;

  CollectorConfig cc;
  cc.endpoint = {"127.0.0.1", 0};
  Collector collector(data.topology, cc);
  REQUIRE(collector.port() != 0);

  const auto report = RunSensors(data, 30.0, {"127.0.0.1", collector.port()});
  CHECK(report.samples == 10);
  CHECK(report.frames_sent == 120);
  for (auto n : report.frames_per_path) CHECK(n == 10);
  CHECK(report.spacing_mean_ms == doctest::Approx(1000.0 / 30.0).epsilon(0.15));

  std::vector<CollectedFrame> got;
  while (got.size() < 10) {
    auto f = collector.Pop(1000ms);
    if (!f) break;
    got.push_back(std::move(*f));
  }
  collector.Stop();
  REQUIRE(got.size() == 10);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].complete());
    CHECK(got[i].frame.timestamp_ms == data.samples[i].csi.timestamp_ms);
    CHECK(got[i].frame.values == data.samples[i].csi.values);
  }
  const auto stats = collector.stats();
  CHECK(stats.packets == 120);
  CHECK(stats.complete_frames == 10);
  CHECK(stats.decode_errors == 0);
}

TEST_CASE("collector counts garbage and survives it") {
  CollectorConfig cc;
  cc.endpoint = {"127.0.0.1", 0};
  cc.timeout = 50ms;
  Collector collector(kTopo, cc);

  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(collector.port());
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  auto send = [&](const std::vector<std::uint8_t> &bytes) {
    ::sendto(fd, bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr *>(&addr),
             sizeof(addr));
  };
  send({1, 2, 3});
  auto bad_magic = EncodeFrame(PathFrame(0, 0, 1.0f));
  bad_magic[1] = 'Q';
  send(bad_magic);
  for (int p = 0; p < 12; ++p) {
    if (p != 4) send(EncodeFrame(PathFrame(p, 500, 3.0f)));
  }
  auto f = collector.Pop(2000ms);
  ::close(fd);
  REQUIRE(f.has_value());
  CHECK_FALSE(f->complete());
  CHECK(f->missing[4]);
  collector.Stop();
  const auto stats = collector.stats();
  CHECK(stats.packets == 13);
  CHECK(stats.decode_errors == 2);
  CHECK(stats.decode_errors_by_reason.at("truncated") == 1);
  CHECK(stats.decode_errors_by_reason.at("magic") == 1);
  CHECK(stats.partial_frames == 1);
}

TEST_CASE("sensor errors are transport errors") {
  synth::GeneratorConfig g;
  g.n_train = 1;
  g.n_test = 1;
  const auto data = synth::GenerateDataset(g).first;
  try {
    RunSensors(data, 30.0, {"no-such-host.invalid", 5566});
    FAIL("expected a transport error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kTransport);
  }
  CHECK_THROWS_AS(RunSensors(data, 0.0, {"127.0.0.1", 5566}), Error);
}
