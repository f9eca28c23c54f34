#pragma once

// Deterministic discrete-event engine: virtual clock, FIFO-stable event
// queue and point-to-point links with delay, Bernoulli loss and an optional
// bandwidth cap modeled as pure serialization delay.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "holepunch/address.h"
#include "holepunch/time.h"

namespace holepunch {

enum class MessageKind : std::uint8_t {
  kControl,
  kAck,
  kHandshake,
  kData,
  kProbe,
  kPathChallenge,
  kPathResponse,
};

std::string_view to_string(MessageKind kind);

struct Datagram {
  EndpointAddress src;
  EndpointAddress dst;
  MessageKind kind = MessageKind::kData;
  // Nominal on-the-wire size; drives serialization delay.
  std::size_t payload_len = 0;
  std::optional<std::uint64_t> conn_tag;
  // Flight index, message sequence number or path-challenge token.
  std::uint32_t seq = 0;
  std::vector<std::uint8_t> payload;

  std::string describe() const;
};

struct LinkSpec {
  Duration one_way_delay{0};
  double loss_rate = 0.0;
  std::optional<std::uint64_t> bandwidth_bps;

  // Throws InvalidArgument.
  void validate() const;
  // payload_len * 8 / bandwidth, rounded up to the next nanosecond.
  Duration serialization_delay(std::size_t payload_len) const;
};

struct Delivered {
  VirtualTime at;
};
struct Dropped {};
using DeliveryResult = std::variant<Delivered, Dropped>;

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }
  // Uniform in [0, 1) from the top 53 bits; platform independent.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

struct TraceEntry {
  VirtualTime at;
  std::string node;
  std::string event;

  bool operator==(const TraceEntry&) const = default;
};

// One line per event: "<time_ms> <node> <event>".
std::string format_trace(const std::vector<TraceEntry>& trace);

struct EventHandle {
  std::uint64_t id = 0;
  bool valid() const { return id != 0; }
};

struct LinkId {
  std::size_t index = 0;
};

struct LinkStats {
  std::uint64_t sent = 0;
  std::uint64_t dropped = 0;
};

class Engine {
 public:
  explicit Engine(std::uint64_t seed = 0);

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  VirtualTime now() const { return now_; }

  // Fires fn exactly at `at`; equal timestamps fire in insertion order.
  // Throws SchedulingInPast when at < now().
  EventHandle schedule(VirtualTime at, std::function<void()> fn);
  EventHandle schedule_after(Duration delay, std::function<void()> fn);
  bool cancel(EventHandle handle);
  bool is_pending(EventHandle handle) const;
  std::size_t pending_events() const { return actions_.size(); }

  VirtualTime run_until_idle();
  // Processes events with timestamp <= limit, then advances the clock to limit.
  VirtualTime run_until(VirtualTime limit);

  // Each link owns a loss stream derived from (engine seed, link index).
  LinkId add_link(const LinkSpec& spec, std::string name = {});
  const LinkSpec& link(LinkId id) const { return links_.at(id.index).spec; }
  const LinkStats& stats(LinkId id) const { return links_.at(id.index).stats; }
  // Returning true from the filter drops the datagram regardless of loss.
  void set_drop_filter(LinkId id, std::function<bool(const Datagram&)> filter);

  // Draws loss, and on delivery invokes on_deliver at
  // now + one_way_delay + serialization delay.
  DeliveryResult send(Datagram d, LinkId link, std::function<void(Datagram)> on_deliver);

  void set_tracing(bool enabled) { tracing_ = enabled; }
  bool tracing() const { return tracing_; }
  void trace(std::string_view node, std::string event);
  const std::vector<TraceEntry>& trace_log() const { return trace_; }

  std::uint64_t seed() const { return seed_; }

 private:
  struct QueueEntry {
    VirtualTime at;
    std::uint64_t seq;
    bool operator>(const QueueEntry& o) const {
      return at != o.at ? at > o.at : seq > o.seq;
    }
  };
  struct Link {
    LinkSpec spec;
    std::string name;
    Rng rng;
    std::function<bool(const Datagram&)> drop_filter;
    LinkStats stats;
  };

  bool step(std::optional<VirtualTime> limit);

  std::uint64_t seed_;
  VirtualTime now_ = kTimeZero;
  std::uint64_t next_seq_ = 1;
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<>> queue_;
  std::unordered_map<std::uint64_t, std::function<void()>> actions_;
  std::vector<Link> links_;
  bool tracing_ = true;
  std::vector<TraceEntry> trace_;
};

}  // namespace holepunch
