#include "holepunch/simnet.h"

#include <limits>
#include <sstream>

#include "holepunch/error.h"

namespace holepunch {

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kControl: return "control";
    case MessageKind::kAck: return "ack";
    case MessageKind::kHandshake: return "handshake";
    case MessageKind::kData: return "data";
    case MessageKind::kProbe: return "probe";
    case MessageKind::kPathChallenge: return "path_challenge";
    case MessageKind::kPathResponse: return "path_response";
  }
  return "unknown";
}

std::string Datagram::describe() const {
  std::string out(to_string(kind));
  out += "[" + std::to_string(seq) + "]";
  out += " " + src.to_string() + "->" + dst.to_string();
  return out;
}

void LinkSpec::validate() const {
  if (one_way_delay < Duration::zero()) {
    fail(ErrorCode::kInvalidArgument, "negative link delay");
  }
  if (!(loss_rate >= 0.0 && loss_rate <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "loss rate outside [0,1]");
  }
  if (bandwidth_bps && *bandwidth_bps == 0) {
    fail(ErrorCode::kInvalidArgument, "zero bandwidth cap");
  }
}

Duration LinkSpec::serialization_delay(std::size_t payload_len) const {
  if (!bandwidth_bps) return Duration::zero();
  constexpr std::uint64_t kBitNanos = 8ULL * 1'000'000'000ULL;
  if (payload_len > std::numeric_limits<std::uint64_t>::max() / kBitNanos) {
    fail(ErrorCode::kInvalidArgument, "payload too large to serialize");
  }
  const std::uint64_t bits_ns = payload_len * kBitNanos;
  const std::uint64_t ns = bits_ns / *bandwidth_bps + (bits_ns % *bandwidth_bps != 0);
  return Duration(static_cast<std::int64_t>(ns));
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (const auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

std::string format_trace(const std::vector<TraceEntry>& trace) {
  std::string out;
  for (const auto& e : trace) {
    out += format_ms(e.at);
    out += ' ';
    out += e.node;
    out += ' ';
    out += e.event;
    out += '\n';
  }
  return out;
}

Engine::Engine(std::uint64_t seed) : seed_(seed) {}

EventHandle Engine::schedule(VirtualTime at, std::function<void()> fn) {
  if (at < now_) {
    fail(ErrorCode::kSchedulingInPast, "event at " + format_ms(at) +
                                           " ms is before now " + format_ms(now_) + " ms");
  }
  const std::uint64_t seq = next_seq_++;
  queue_.push({at, seq});
  actions_.emplace(seq, std::move(fn));
  return EventHandle{seq};
}

EventHandle Engine::schedule_after(Duration delay, std::function<void()> fn) {
  return schedule(now_ + delay, std::move(fn));
}

bool Engine::cancel(EventHandle handle) { return actions_.erase(handle.id) > 0; }

bool Engine::is_pending(EventHandle handle) const {
  return actions_.count(handle.id) > 0;
}

bool Engine::step(std::optional<VirtualTime> limit) {
  while (!queue_.empty()) {
    const QueueEntry top = queue_.top();
    if (limit && top.at > *limit) return false;
    queue_.pop();
    auto it = actions_.find(top.seq);
    if (it == actions_.end()) continue;  // cancelled
    auto fn = std::move(it->second);
    actions_.erase(it);
    now_ = top.at;
    fn();
    return true;
  }
  return false;
}

VirtualTime Engine::run_until_idle() {
  while (step(std::nullopt)) {
  }
  return now_;
}

VirtualTime Engine::run_until(VirtualTime limit) {
  while (step(limit)) {
  }
  if (limit > now_) now_ = limit;
  return now_;
}

LinkId Engine::add_link(const LinkSpec& spec, std::string name) {
  spec.validate();
  const std::size_t index = links_.size();
  if (name.empty()) name = "link" + std::to_string(index);
  links_.push_back(Link{spec, std::move(name), Rng(derive_seed({seed_, index})), {}, {}});
  return LinkId{index};
}

void Engine::set_drop_filter(LinkId id, std::function<bool(const Datagram&)> filter) {
  links_.at(id.index).drop_filter = std::move(filter);
}

DeliveryResult Engine::send(Datagram d, LinkId id, std::function<void(Datagram)> on_deliver) {
  if (d.src == d.dst) {
    fail(ErrorCode::kInvalidArgument, "datagram source equals destination");
  }
  Link& link = links_.at(id.index);
  ++link.stats.sent;
  // The draw happens for every datagram so the stream position depends only
  // on how many datagrams crossed this link.
  const double draw = link.rng.uniform();
  const bool forced = link.drop_filter && link.drop_filter(d);
  if (forced || draw < link.spec.loss_rate) {
    ++link.stats.dropped;
    trace(link.name, std::string(forced ? "forced_drop " : "lost ") + d.describe());
    return Dropped{};
  }
  const VirtualTime at =
      now_ + link.spec.one_way_delay + link.spec.serialization_delay(d.payload_len);
  schedule(at, [fn = std::move(on_deliver), d = std::move(d)]() mutable { fn(std::move(d)); });
  return Delivered{at};
}

void Engine::trace(std::string_view node, std::string event) {
  if (!tracing_) return;
  trace_.push_back(TraceEntry{now_, std::string(node), std::move(event)});
}

}  // namespace holepunch
