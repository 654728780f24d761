#include "generators.hpp"
#include "relloc/ranging.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

using namespace relloc;
using relloc::testing::Gen;

namespace {

// Golden frames written out byte by byte from the layout table.
const Frame kGoldenZero = {0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
                           0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
                           0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00};

const Frame kGoldenTypical = {0x01, 0x03,                    // version, sender
                              0x04, 0x03, 0x02, 0x01,        // sequence 0x01020304
                              0x00, 0x00, 0x80, 0x3F,        // vx 1.0
                              0x00, 0x00, 0x20, 0xC0,        // vy -2.5
                              0x00, 0x00, 0x00, 0x3F,        // ax 0.5
                              0x00, 0x00, 0x00, 0x00,        // ay 0
                              0x00, 0x00, 0x00, 0x00,        // yaw rate 0
                              0x00, 0x00, 0x80, 0x3F,        // height 1.0
                              0x87, 0xD6, 0x12, 0x00, 0x00, 0x00, 0x00, 0x00,  // 1234567 us
                              0x00};

const Frame kGoldenExtreme = {0x01, 0xFF,                    // version, sender 255
                              0xFF, 0xFF, 0xFF, 0xFF,        // sequence max
                              0x00, 0x00, 0x00, 0x80,        // vx -0.0
                              0x00, 0x00, 0x80, 0x7F,        // vy +inf
                              0xCD, 0xCC, 0xCC, 0x3D,        // ax 0.1f
                              0x00, 0x00, 0x80, 0xBF,        // ay -1.0
                              0x00, 0x00, 0x00, 0x40,        // yaw rate 2.0
                              0x00, 0x00, 0x80, 0x3E,        // height 0.25
                              0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF,  // timestamp max
                              0xA5};

RangingMessage typical_message() {
  RangingMessage m;
  m.sender_id = 3;
  m.sequence = 0x01020304u;
  m.vx = 1.0f;
  m.vy = -2.5f;
  m.ax = 0.5f;
  m.height = 1.0f;
  m.timestamp_us = 1234567;
  return m;
}

RangingMessage extreme_message() {
  RangingMessage m;
  m.sender_id = 255;
  m.sequence = 0xFFFFFFFFu;
  m.vx = -0.0f;
  m.vy = std::numeric_limits<float>::infinity();
  m.ax = 0.1f;
  m.ay = -1.0f;
  m.yaw_rate = 2.0f;
  m.height = 0.25f;
  m.timestamp_us = ~0ULL;
  m.flags = 0xA5;
  return m;
}

class FixedSource final : public AgentStateSource {
 public:
  RangingMessage broadcast(int agent, double t) const override {
    RangingMessage m;
    m.vx = static_cast<float>(agent);
    m.vy = static_cast<float>(t);
    return m;
  }
  double true_range(int a, int b, double) const override { return 1.0 + a + 10.0 * b; }
};

}  // namespace

TEST(Frame, GoldenEncodings) {
  EXPECT_EQ(encode_message(RangingMessage{}), kGoldenZero);
  EXPECT_EQ(encode_message(typical_message()), kGoldenTypical);
  EXPECT_EQ(encode_message(extreme_message()), kGoldenExtreme);
}

TEST(Frame, GoldenDecodings) {
  EXPECT_EQ(decode_message(kGoldenZero), RangingMessage{});
  EXPECT_EQ(decode_message(kGoldenTypical), typical_message());
  const RangingMessage m = decode_message(kGoldenExtreme);
  EXPECT_EQ(m, extreme_message());
  EXPECT_TRUE(std::signbit(m.vx));
  EXPECT_TRUE(std::isinf(m.vy));
}

TEST(Frame, FuzzRoundTripIsBitExact) {
  Gen g(41);
  for (int i = 0; i < 10000; ++i) {
    RangingMessage m;
    m.sender_id = static_cast<std::uint8_t>(g.integer(0, 255));
    m.sequence = static_cast<std::uint32_t>(g.rng()());
    float* fields[] = {&m.vx, &m.vy, &m.ax, &m.ay, &m.yaw_rate, &m.height};
    for (float* f : fields) *f = std::bit_cast<float>(static_cast<std::uint32_t>(g.rng()()));
    m.timestamp_us = g.rng()();
    m.flags = static_cast<std::uint8_t>(g.integer(0, 255));
    const Frame f = encode_message(m);
    ASSERT_EQ(decode_message(f), m);
    ASSERT_EQ(encode_message(decode_message(f)), f);
  }
}

TEST(Frame, DecodeRejectsWrongLengthAndVersion) {
  const std::vector<std::uint8_t> short_frame(kFrameSize - 1, 0x01);
  EXPECT_THROW(decode_message(short_frame), std::invalid_argument);
  const std::vector<std::uint8_t> long_frame(kFrameSize + 1, 0x01);
  EXPECT_THROW(decode_message(long_frame), std::invalid_argument);
  Frame f = kGoldenTypical;
  f[0] = 2;
  EXPECT_THROW(decode_message(f), std::invalid_argument);
  RangingMessage m;
  m.version = 7;
  EXPECT_THROW(encode_message(m), std::invalid_argument);
}

TEST(Schedule, RateLawHitsBothAnchors) {
  ScheduleConfig two;
  EXPECT_DOUBLE_EQ(two.pair_rate(), 25.0);
  EXPECT_DOUBLE_EQ(two.slot_interval(), 0.04);
  ScheduleConfig three;
  three.n_agents = 3;
  EXPECT_NEAR(three.pair_rate(), 16.0, 1e-12);
  EXPECT_NEAR(three.slot_interval(), 1.0 / 48.0, 1e-12);
  ScheduleConfig one;
  one.n_agents = 1;
  EXPECT_THROW(one.validate(), std::invalid_argument);
}

TEST(Schedule, LexicographicRoundRobin) {
  const auto pairs = all_pairs(4);
  const std::vector<Exchange> expect = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  EXPECT_EQ(pairs, expect);
  ScheduleConfig s;
  s.n_agents = 4;
  for (int k = 0; k < 18; ++k) {
    const double t = (k + 0.5) * s.slot_interval();
    ASSERT_EQ(schedule_step(s, t).size(), 1u);
    EXPECT_EQ(schedule_step(s, t)[0], expect[static_cast<std::size_t>(k % 6)]);
  }
}

TEST(Twr, DropRateAndNoiseMoments) {
  LinkModel link;
  link.drop_probability = 0.2;
  link.range_sigma = 0.15;
  CounterRng rng(3);
  int drops = 0, kept = 0;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < 50000; ++i) {
    const auto r = twr_round(link, 5.0, rng);
    if (!r) {
      ++drops;
      continue;
    }
    ++kept;
    sum += *r - 5.0;
    sq += (*r - 5.0) * (*r - 5.0);
  }
  EXPECT_NEAR(drops / 50000.0, 0.2, 0.01);
  EXPECT_NEAR(sum / kept, 0.0, 0.005);
  EXPECT_NEAR(std::sqrt(sq / kept), 0.15, 0.005);
  EXPECT_THROW(twr_round(link, -1.0, rng), std::invalid_argument);
}

TEST(GapInjector, BoundsAndMixtureMean) {
  LinkModel link;
  link.burst_probability = 0.1;
  CounterRng rng(4);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double gap = gap_injector(link, rng);
    ASSERT_GE(gap, link.nominal_interval());
    ASSERT_LE(gap, link.max_gap_clamp);
    if (gap != link.nominal_interval()) {
      ASSERT_GE(gap, 2.0 * link.nominal_interval());
    }
    sum += gap;
  }
  EXPECT_NEAR(sum / n, gap_mixture_mean(link), 0.002);
  link.burst_probability = 0.0;
  EXPECT_DOUBLE_EQ(gap_mixture_mean(link), 0.04);
  EXPECT_DOUBLE_EQ(gap_injector(link, rng), 0.04);
}

TEST(LinkModel, Validation) {
  LinkModel l;
  l.drop_probability = 1.0;
  EXPECT_THROW(l.validate(), std::invalid_argument);
  l = LinkModel{};
  l.burst_probability = 0.5;
  l.max_gap_clamp = 0.05;
  EXPECT_THROW(l.validate(), std::invalid_argument);
}

TEST(Network, SequencesTimestampsAndSlotSpacing) {
  ScheduleConfig s;
  s.n_agents = 3;
  NetworkSimulator net(s, LinkModel{}, 9);
  FixedSource src;
  std::vector<std::uint32_t> next_seq(3, 0);
  double prev = 0.0;
  for (int k = 0; k < 30; ++k) {
    const RangingEvent ev = net.step(src);
    EXPECT_NEAR(ev.t - prev, s.slot_interval(), 1e-12);
    prev = ev.t;
    const Exchange ex = all_pairs(3)[static_cast<std::size_t>(k % 3)];
    EXPECT_EQ(ev.initiator, ex.initiator);
    EXPECT_EQ(ev.responder, ex.responder);
    ASSERT_TRUE(ev.range.has_value());
    for (const Frame* f : {&ev.initiator_frame, &ev.responder_frame}) {
      const RangingMessage m = decode_message(*f);
      EXPECT_EQ(m.sequence, next_seq[m.sender_id]++);
      EXPECT_EQ(m.timestamp_us, static_cast<std::uint64_t>(std::llround(ev.t * 1e6)));
      EXPECT_EQ(m.vx, static_cast<float>(m.sender_id));
    }
  }
  EXPECT_EQ(next_seq, (std::vector<std::uint32_t>{20, 20, 20}));
}

TEST(Network, SameSeedSameEvents) {
  LinkModel link{0.1, 0.2, 25.0, 0.47, 0.1};
  NetworkSimulator a(ScheduleConfig{}, link, 5), b(ScheduleConfig{}, link, 5);
  FixedSource src;
  for (int k = 0; k < 200; ++k) {
    const RangingEvent x = a.step(src), y = b.step(src);
    ASSERT_EQ(x.t, y.t);
    ASSERT_EQ(x.range, y.range);
  }
}

TEST(MessageLog, Rows) {
  std::ostringstream os;
  write_message_log_header(os);
  RangingEvent ev;
  ev.t = 0.5;
  ev.responder = 2;
  ev.range = 1.25;
  write_message_log_row(os, ev);
  ev.range.reset();
  write_message_log_row(os, ev);
  EXPECT_EQ(os.str(), "t,initiator,responder,range_m,dropped\n0.5,0,2,1.25,0\n0.5,0,2,,1\n");
}
