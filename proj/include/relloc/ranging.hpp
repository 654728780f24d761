#pragma once

// Message-level model of the two-way-ranging radio layer.
//
// Frame layout (39 bytes, little-endian):
//   0      version (1)
//   1      sender_id
//   2..5   sequence (u32)
//   6..9   vx (f32)        10..13 vy
//   14..17 ax              18..21 ay
//   22..25 yaw_rate        26..29 height
//   30..37 timestamp_us (u64)
//   38     flags (reserved, carried verbatim)

#include "relloc/rng.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <functional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace relloc {

inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameSize = 39;

using Frame = std::array<std::uint8_t, kFrameSize>;

struct RangingMessage {
  std::uint8_t version{kFrameVersion};
  std::uint8_t sender_id{0};
  std::uint32_t sequence{0};
  float vx{0.0f}, vy{0.0f};
  float ax{0.0f}, ay{0.0f};
  float yaw_rate{0.0f};
  float height{0.0f};
  std::uint64_t timestamp_us{0};
  std::uint8_t flags{0};

  // Bitwise identity, so NaN payloads compare equal to themselves.
  friend bool operator==(const RangingMessage& a, const RangingMessage& b) {
    auto bits = [](const RangingMessage& m) {
      return std::tuple(m.version, m.sender_id, m.sequence, std::bit_cast<std::uint32_t>(m.vx),
                        std::bit_cast<std::uint32_t>(m.vy), std::bit_cast<std::uint32_t>(m.ax),
                        std::bit_cast<std::uint32_t>(m.ay), std::bit_cast<std::uint32_t>(m.yaw_rate),
                        std::bit_cast<std::uint32_t>(m.height), m.timestamp_us, m.flags);
    };
    return bits(a) == bits(b);
  }
};

namespace detail {

template <typename U>
void put_le(Frame& f, std::size_t at, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) f[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

template <typename U>
U get_le(std::span<const std::uint8_t> b, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[at + i]) << (8 * i));
  return v;
}

}  // namespace detail

inline Frame encode_message(const RangingMessage& m) {
  if (m.version != kFrameVersion) throw std::invalid_argument("encode_message: unsupported version");
  Frame f{};
  f[0] = m.version;
  f[1] = m.sender_id;
  detail::put_le(f, 2, m.sequence);
  const float fields[] = {m.vx, m.vy, m.ax, m.ay, m.yaw_rate, m.height};
  for (std::size_t i = 0; i < 6; ++i) detail::put_le(f, 6 + 4 * i, std::bit_cast<std::uint32_t>(fields[i]));
  detail::put_le(f, 30, m.timestamp_us);
  f[38] = m.flags;
  return f;
}

inline RangingMessage decode_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kFrameSize) {
    throw std::invalid_argument("decode_message: expected " + std::to_string(kFrameSize) + " bytes, got " +
                                std::to_string(bytes.size()));
  }
  if (bytes[0] != kFrameVersion) {
    throw std::invalid_argument("decode_message: unknown version " + std::to_string(bytes[0]));
  }
  RangingMessage m;
  m.version = bytes[0];
  m.sender_id = bytes[1];
  m.sequence = detail::get_le<std::uint32_t>(bytes, 2);
  float* fields[] = {&m.vx, &m.vy, &m.ax, &m.ay, &m.yaw_rate, &m.height};
  for (std::size_t i = 0; i < 6; ++i) *fields[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, 6 + 4 * i));
  m.timestamp_us = detail::get_le<std::uint64_t>(bytes, 30);
  m.flags = bytes[38];
  return m;
}

struct LinkModel {
  double range_sigma{0.1};
  double drop_probability{0.0};
  double nominal_rate{25.0};     // Hz, single pair
  double max_gap_clamp{0.47};    // s
  double burst_probability{0.0}; // chance an interval is stretched

  double nominal_interval() const { return 1.0 / nominal_rate; }

  void validate() const {
    if (!(range_sigma >= 0.0)) throw std::invalid_argument("LinkModel: range_sigma must be >= 0");
    if (!(drop_probability >= 0.0 && drop_probability < 1.0)) {
      throw std::invalid_argument("LinkModel: drop_probability must be in [0, 1)");
    }
    if (!(burst_probability >= 0.0 && burst_probability <= 1.0)) {
      throw std::invalid_argument("LinkModel: burst_probability must be in [0, 1]");
    }
    if (!(nominal_rate > 0.0)) throw std::invalid_argument("LinkModel: nominal_rate must be > 0");
    if (burst_probability > 0.0 && !(max_gap_clamp >= 2.0 * nominal_interval())) {
      throw std::invalid_argument("LinkModel: max_gap_clamp must be >= twice the nominal interval");
    }
  }
};

// Additive Gaussian range error; nullopt when the exchange is lost.
inline std::optional<double> twr_round(const LinkModel& link, double true_range, CounterRng& rng) {
  if (!(true_range >= 0.0)) throw std::invalid_argument("twr_round: true_range must be >= 0");
  const double u = rng.uniform();
  const double n = rng.normal();
  if (u < link.drop_probability) return std::nullopt;
  return true_range + link.range_sigma * n;
}

// Nominal interval, or with burst_probability a stretched interval uniform
// in [2 * nominal, max_gap_clamp].
inline double gap_injector(const LinkModel& link, CounterRng& rng) {
  const double nominal = link.nominal_interval();
  const double u = rng.uniform();
  const double w = rng.uniform();
  if (u >= link.burst_probability) return nominal;
  return 2.0 * nominal + w * (link.max_gap_clamp - 2.0 * nominal);
}

inline double gap_mixture_mean(const LinkModel& link) {
  const double nominal = link.nominal_interval();
  return (1.0 - link.burst_probability) * nominal +
         link.burst_probability * 0.5 * (2.0 * nominal + link.max_gap_clamp);
}

// Per-pair rate falls as pairs^-alpha; alpha puts 3 agents (3 pairs) at 16 Hz
// when 2 agents (1 pair) run at 25 Hz.
inline const double kRateExponent = std::log(25.0 / 16.0) / std::log(3.0);

struct ScheduleConfig {
  int n_agents{2};
  double base_pair_rate{25.0};
  double rate_exponent{kRateExponent};

  int pair_count() const { return n_agents * (n_agents - 1) / 2; }
  double pair_rate() const { return base_pair_rate * std::pow(static_cast<double>(pair_count()), -rate_exponent); }
  double slot_interval() const { return 1.0 / (pair_rate() * pair_count()); }

  void validate() const {
    if (n_agents < 2) throw std::invalid_argument("ScheduleConfig: n_agents must be >= 2");
    if (n_agents > 255) throw std::invalid_argument("ScheduleConfig: n_agents must fit a sender id");
    if (!(base_pair_rate > 0.0)) throw std::invalid_argument("ScheduleConfig: base_pair_rate must be > 0");
  }
};

struct Exchange {
  int initiator{0};
  int responder{0};
  friend bool operator==(const Exchange&, const Exchange&) = default;
};

// Pairs in lexicographic order: (0,1), (0,2), ..., (1,2), ...
inline std::vector<Exchange> all_pairs(int n_agents) {
  std::vector<Exchange> out;
  for (int i = 0; i < n_agents; ++i) {
    for (int j = i + 1; j < n_agents; ++j) out.push_back({i, j});
  }
  return out;
}

inline Exchange pair_for_slot(const ScheduleConfig& sched, long long slot) {
  const auto pairs = all_pairs(sched.n_agents);
  const auto n = static_cast<long long>(pairs.size());
  return pairs[static_cast<std::size_t>(((slot % n) + n) % n)];
}

// Exchanges in the slot that contains t (one pair per slot, round robin).
inline std::vector<Exchange> schedule_step(const ScheduleConfig& sched, double t) {
  sched.validate();
  const auto slot = static_cast<long long>(std::floor(t / sched.slot_interval() + 1e-9));
  return {pair_for_slot(sched, slot)};
}

struct RangingEvent {
  double t{0.0};
  int initiator{0};
  int responder{0};
  std::optional<double> range;  // nullopt when dropped
  Frame initiator_frame{};
  Frame responder_frame{};
};

// Source of the state each agent broadcasts and of true inter-agent ranges.
class AgentStateSource {
 public:
  virtual ~AgentStateSource() = default;
  virtual RangingMessage broadcast(int agent, double t) const = 0;
  virtual double true_range(int a, int b, double t) const = 0;
};

// Discrete-event queue of ranging slots. Slot spacing follows the schedule's
// slot interval, stretched by the link's burst model.
class NetworkSimulator {
 public:
  NetworkSimulator(ScheduleConfig sched, LinkModel link, std::uint64_t seed)
      : sched_(sched), link_(link), rng_(CounterRng::for_stream(seed, 0x6e6574ULL)) {
    sched_.validate();
    link_.validate();
    slot_link_ = link_;
    slot_link_.nominal_rate = 1.0 / sched_.slot_interval();
    if (slot_link_.burst_probability > 0.0 && slot_link_.max_gap_clamp < 2.0 * slot_link_.nominal_interval()) {
      throw std::invalid_argument("NetworkSimulator: max_gap_clamp shorter than two slots");
    }
    queue_.push({slot_link_.nominal_interval(), 0});
    sequence_.assign(static_cast<std::size_t>(sched_.n_agents), 0);
  }

  const ScheduleConfig& schedule() const { return sched_; }
  const LinkModel& link() const { return link_; }
  double next_time() const { return queue_.top().t; }

  RangingEvent step(const AgentStateSource& src) {
    const Slot s = queue_.top();
    queue_.pop();
    const Exchange ex = pair_for_slot(sched_, s.index);
    RangingEvent ev;
    ev.t = s.t;
    ev.initiator = ex.initiator;
    ev.responder = ex.responder;
    ev.range = twr_round(link_, src.true_range(ex.initiator, ex.responder, s.t), rng_);
    ev.initiator_frame = stamp(src.broadcast(ex.initiator, s.t), ex.initiator, s.t);
    ev.responder_frame = stamp(src.broadcast(ex.responder, s.t), ex.responder, s.t);
    queue_.push({s.t + gap_injector(slot_link_, rng_), s.index + 1});
    return ev;
  }

 private:
  struct Slot {
    double t;
    long long index;
    bool operator>(const Slot& o) const { return t != o.t ? t > o.t : index > o.index; }
  };

  Frame stamp(RangingMessage m, int agent, double t) {
    m.version = kFrameVersion;
    m.sender_id = static_cast<std::uint8_t>(agent);
    m.sequence = sequence_[static_cast<std::size_t>(agent)]++;
    m.timestamp_us = static_cast<std::uint64_t>(std::llround(t * 1e6));
    return encode_message(m);
  }

  ScheduleConfig sched_;
  LinkModel link_;
  LinkModel slot_link_;
  CounterRng rng_;
  std::priority_queue<Slot, std::vector<Slot>, std::greater<Slot>> queue_;
  std::vector<std::uint32_t> sequence_;
};

inline void write_message_log_header(std::ostream& os) { os << "t,initiator,responder,range_m,dropped\n"; }

inline void write_message_log_row(std::ostream& os, const RangingEvent& ev) {
  os << ev.t << ',' << ev.initiator << ',' << ev.responder << ',';
  if (ev.range) os << *ev.range;
  os << ',' << (ev.range ? 0 : 1) << '\n';
}

}  // namespace relloc
