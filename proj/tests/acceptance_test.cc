// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Expected values come from the closed-form oracles in
// oracles.h, never from the library's own timing helpers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <sstream>
#include <string>

#include "codec_properties.h"
#include "holepunch/error.h"
#include "holepunch/lab.h"
#include "holepunch/puncher.h"
#include "holepunch/recovery.h"
#include "holepunch/transport.h"
#include "nat_properties.h"
#include "oracles.h"

namespace {

using namespace holepunch;

using Check = std::function<std::string()>;

oracle::Kind to_oracle(TransportKind k) {
  return k == TransportKind::kQuic ? oracle::Kind::kQuic
         : k == TransportKind::kTcp ? oracle::Kind::kTcp
                                    : oracle::Kind::kTcpTls;
}

std::string ms(Duration d) { return format_ms(d) + " ms"; }

// 1. Lossless punch times over an 11-point offset grid stay inside
// [2, 2.5] RTT (QUIC) and [2.5, 3] RTT (TCP) and equal the oracle exactly.
std::string punch_bounds() {
  int runs = 0;
  for (auto kind : {TransportKind::kQuic, TransportKind::kTcp}) {
    const double lo_rtts = kind == TransportKind::kQuic ? 2.0 : 2.5;
    for (std::int64_t rtt_ms : {20, 100, 200}) {
      const Duration rtt = millis(rtt_ms);
      for (int i = 0; i <= 10; ++i) {
        PunchScenario s;
        s.transport = kind;
        s.rtt = rtt;
        s.start_offset = rtt * (i - 5) / 10;
        TopologyConfig cfg;
        cfg.trace = false;
        const PunchOutcome o = punch(s, cfg);
        ++runs;
        const auto lo = Duration(static_cast<std::int64_t>(lo_rtts * 2) * rtt.count() / 2);
        const auto hi = lo + rtt / 2;
        const auto want = oracle::punch_elapsed(to_oracle(kind), rtt.count(), s.start_offset.count());
        if (!o.success || o.elapsed < lo || o.elapsed > hi || o.elapsed.count() != want) {
          return std::string(to_string(kind)) + " rtt " + ms(rtt) + " offset " + ms(s.start_offset) +
                 ": elapsed " + ms(o.elapsed) + ", expected " + ms(Duration(want));
        }
      }
    }
  }
  return runs == 66 ? "" : "wrong number of runs";
}

// 2. Means at (100 ms, 0%) and (200 ms, 0%) fall in the analytic windows.
std::string reference_means() {
  ExperimentConfig cfg;
  cfg.combos = {{millis(100), 0.0}, {millis(200), 0.0}};
  const auto res = run_sweep(cfg);
  struct Window {
    std::int64_t rtt;
    TransportKind kind;
    double lo, hi, reference;
  };
  const Window windows[] = {{100, TransportKind::kQuic, 200, 250, 213},
                            {100, TransportKind::kTcp, 250, 300, 256},
                            {200, TransportKind::kQuic, 400, 500, 416},
                            {200, TransportKind::kTcp, 500, 600, 505}};
  std::ostringstream detail;
  for (const auto& w : windows) {
    bool found = false;
    for (const auto& s : res.summaries) {
      if (s.rtt != millis(w.rtt) || s.transport != w.kind) continue;
      found = true;
      if (s.trials != 100 || s.mean_ms < w.lo || s.mean_ms > w.hi || w.reference < w.lo || w.reference > w.hi) {
        detail << to_string(w.kind) << " rtt " << w.rtt << " mean " << s.mean_ms << " outside [" << w.lo << ", "
               << w.hi << "]";
        return detail.str();
      }
    }
    if (!found) return "missing summary";
  }
  return {};
}

// 3. Dropping the first punch-opening flight once adds exactly the
// transport's first retransmission wait; checked by diffing traces.
std::string loss_penalties() {
  for (auto kind : {TransportKind::kQuic, TransportKind::kTcp}) {
    for (std::int64_t rtt_ms : {20, 100, 200}) {
      PunchScenario s;
      s.transport = kind;
      s.rtt = millis(rtt_ms);
      const PunchOutcome clean = punch(s);

      PunchSession session(s);
      session.setup();
      bool dropped = false;
      session.engine().set_drop_filter(session.topology().uplink(Site::kA), [&](const Datagram& d) {
        if (dropped || d.kind != MessageKind::kHandshake || d.seq != 0) return false;
        dropped = true;
        return true;
      });
      const PunchOutcome lossy = session.punch();
      const oracle::Nanos penalty = kind == TransportKind::kQuic ? 200 * oracle::kMs
                                                                 : oracle::tcp_rto(s.rtt.count());
      if (kind == TransportKind::kTcp && penalty != 1000 * oracle::kMs) return "tcp penalty is not one second";
      if (!clean.success || !lossy.success || !dropped) return "punch failed";
      if ((lossy.elapsed - clean.elapsed).count() != penalty) {
        return std::string(to_string(kind)) + " rtt " + std::to_string(rtt_ms) + ": penalty " +
               ms(lossy.elapsed - clean.elapsed);
      }
      // The traces agree up to the drop; the lossy one shows the drop and
      // its completion shifted by the penalty.
      const auto first_diff = std::mismatch(clean.trace.begin(), clean.trace.end(), lossy.trace.begin(),
                                            lossy.trace.end());
      if (first_diff.second == lossy.trace.end() ||
          first_diff.second->event.find("handshake[0]") == std::string::npos) {
        return "traces diverge somewhere other than the dropped flight";
      }
      bool saw_drop = false;
      for (const auto& t : lossy.trace) saw_drop = saw_drop || t.event.find("forced_drop") != std::string::npos;
      if (!saw_drop) return "lossy trace has no drop entry";
      auto punched_at = [](const PunchOutcome& o) {
        for (const auto& t : o.trace) {
          if (t.event.rfind("punched", 0) == 0) return t.at;
        }
        return VirtualTime{};
      };
      if ((punched_at(lossy) - punched_at(clean)).count() != penalty) return "trace completion not shifted";
    }
  }
  return {};
}

// 4. compute_rto floors at one second and is the raw sum otherwise.
std::string rto_floor() {
  Rng rng(4);
  int floored = 0;
  for (int i = 0; i < 5000; ++i) {
    // Alternate between a sub-second range and a wide one so both sides of
    // the floor get plenty of cases.
    const std::uint64_t span = i % 2 ? 1'000'000'000ULL : 4'000'000'000ULL;
    const auto srtt = static_cast<std::int64_t>(rng.next() % span);
    const auto var = static_cast<std::int64_t>(rng.next() % (span / 4));
    const Duration got = compute_rto(Duration(srtt), Duration(var));
    if (got.count() != oracle::rto(srtt, var)) {
      return "srtt " + std::to_string(srtt) + " rttvar " + std::to_string(var) + " gave " + ms(got);
    }
    floored += srtt + 4 * var < 1000 * oracle::kMs;
  }
  return floored > 1000 && floored < 4000 ? "" : "generator did not cover both branches";
}

// 5. delta = 2 RTT (QUIC) and 3 RTT (TCP); asymmetric 10/20/30/40 -> 100.
std::string recovery_identities() {
  ExperimentConfig cfg;
  const auto cmp = run_recovery_compare(cfg);
  for (std::size_t i = 0; i < cfg.recovery_rtts.size(); ++i) {
    const Duration rtt = cfg.recovery_rtts[i];
    if (cmp.deltas[i].first != rtt * 2 || cmp.deltas[i].second != rtt * 3) {
      return "rtt " + ms(rtt) + ": deltas " + ms(cmp.deltas[i].first) + ", " + ms(cmp.deltas[i].second);
    }
  }
  for (const auto& row : cmp.rows) {
    const auto& r = row.report;
    oracle::Nanos want = 0;
    if (r.scheme == RecoveryScheme::kMigration) {
      const auto leg = row.rtt.count() / 2;
      want = oracle::migration_total(leg, leg, leg, leg);
    } else {
      want = oracle::repunch_total(r.scheme == RecoveryScheme::kRepunchQuic ? oracle::Kind::kQuic
                                                                            : oracle::Kind::kTcp,
                                   row.rtt.count());
    }
    if (r.total.count() != want) return std::string(to_string(r.scheme)) + " total " + ms(r.total);
  }

  TopologyConfig topo;
  PathDelays d;
  d.a_to_s = millis(10);
  d.s_to_b = millis(20);
  d.b_to_a = millis(30);
  d.a_to_b = millis(40);
  d.s_to_a = millis(10);
  d.b_to_s = millis(20);
  topo.path_delays = d;
  PunchScenario s;
  s.rtt = millis(100);
  PunchSession session(s, topo);
  if (!session.punch().success) return "asymmetric punch failed";
  const auto change = inject_address_change(session, "A", EndpointAddress::parse("192.168.0.3:7000"));
  const RecoveryReport r = migrate(session, change);
  const auto want = oracle::migration_total(10 * oracle::kMs, 20 * oracle::kMs, 30 * oracle::kMs, 40 * oracle::kMs);
  if (!r.success || r.total.count() != want || r.legs.sum() != r.total) {
    return "asymmetric migration total " + ms(r.total);
  }
  return {};
}

// 6. NAT property suite, 500 cases per property.
std::string nat_properties() {
  const std::pair<const char*, std::string (*)(int, std::uint64_t)> props[] = {
      {"EIM stability", natprop::eim_stability},
      {"ADPM distinctness", natprop::adpm_distinctness},
      {"unsolicited-drop completeness", natprop::unsolicited_drop},
      {"translation round-trip", natprop::round_trip},
      {"session expiry", natprop::expiry}};
  for (const auto& [name, fn] : props) {
    const std::string err = fn(500, 2024);
    if (!err.empty()) return std::string(name) + ": " + err;
  }
  return {};
}

// 7. ADPM on both NATs: every one of 100 trials fails.
std::string adpm_failure() {
  PunchScenario s;
  s.rtt = millis(100);
  s.seed = 42;
  TopologyConfig cfg;
  cfg.nat_a_mapping = MappingPolicy::kAddressAndPortDependent;
  cfg.nat_b_mapping = MappingPolicy::kAddressAndPortDependent;
  cfg.trace = false;
  const auto outcomes = run_trials(s, 100, cfg);
  int failed = 0;
  for (const auto& o : outcomes) failed += o.success ? 0 : 1;
  return failed == 100 ? "" : std::to_string(failed) + "/100 failed";
}

// 8. Bandwidth spread under 1% once serialization is in the baseline.
std::string bandwidth_insensitivity() {
  ExperimentConfig cfg;
  const auto r = run_bandwidth_suite(cfg);
  for (const auto& spread : r.spreads) {
    // Independent baseline: the lossless punch time at this RTT plus the
    // serialization of every frame on the critical path.
    for (std::size_t b = 0; b < cfg.bandwidths.size(); ++b) {
      oracle::Nanos ser = 0;
      if (const auto bw = cfg.bandwidths[b]) {
        ser = oracle::serialization(19, *bw) + oracle::serialization(17, *bw) +
              oracle::flights(to_oracle(spread.transport)) * oracle::serialization(1200, *bw);
      }
      if (std::abs(spread.serialization_ms[b] - static_cast<double>(ser) / 1e6) > 1e-9) {
        return "serialization baseline differs from oracle";
      }
    }
    if (!(spread.adjusted_spread < 0.01)) {
      return std::string(to_string(spread.transport)) + " spread " + std::to_string(spread.adjusted_spread * 100) + "%";
    }
  }
  return {};
}

// 9. Default sweep twice: identical CSV bytes, each run under 10 s.
std::string determinism() {
  ExperimentConfig cfg;
  auto timed = [&](double& secs) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rows = run_sweep(cfg).rows;
    secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rows.size() != 2400) return std::string();
    return to_csv(rows);
  };
  double s1 = 0, s2 = 0;
  const std::string a = timed(s1);
  const std::string b = timed(s2);
  if (a.empty()) return "default sweep did not produce 2400 rows";
  if (a != b) return "CSV differs between runs";
  if (s1 + s2 >= 10.0) return "took " + std::to_string(s1 + s2) + " s";
  return {};
}

// 10. Codec: 10000 round trips and 1000 mutated frames.
std::string codec() {
  std::string err = codecprop::round_trip(10000, 42);
  if (!err.empty()) return err;
  return codecprop::mutations(1000, 43);
}

}  // namespace

int main() {
  const std::pair<const char*, Check> criteria[] = {
      {"punch-time bounds over offset grid", punch_bounds},
      {"reference means at 100 ms and 200 ms", reference_means},
      {"single-loss penalties 200 ms / 1000 ms", loss_penalties},
      {"retransmission timeout floor", rto_floor},
      {"recovery identities", recovery_identities},
      {"NAT property suite", nat_properties},
      {"ADPM punches fail", adpm_failure},
      {"bandwidth insensitivity", bandwidth_insensitivity},
      {"sweep determinism", determinism},
      {"codec round trip and mutations", codec},
  };
  int failures = 0;
  int n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    std::string err;
    try {
      err = check();
    } catch (const std::exception& e) {
      err = std::string("exception: ") + e.what();
    }
    if (err.empty()) {
      std::printf("PASS %d %s\n", n, name);
    } else {
      ++failures;
      std::printf("FAIL %d %s: %s\n", n, name, err.c_str());
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
