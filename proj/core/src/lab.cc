#include "holepunch/lab.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "holepunch/error.h"

namespace holepunch {
namespace {

[[noreturn]] void bad_config(const std::string& why) { fail(ErrorCode::kInvalidConfig, why); }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(sep);
    out.push_back(trim(s.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    s = s.substr(pos + 1);
  }
  return out;
}

double parse_double(std::string_view s, std::string_view key) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    bad_config("bad number '" + std::string(s) + "' for " + std::string(key));
  }
  return v;
}

std::uint64_t parse_u64(std::string_view s, std::string_view key) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    bad_config("bad integer '" + std::string(s) + "' for " + std::string(key));
  }
  return v;
}

double parse_loss(std::string_view s) {
  if (!s.empty() && s.back() == '%') return parse_double(trim(s.substr(0, s.size() - 1)), "loss") / 100.0;
  return parse_double(s, "loss");
}

std::optional<std::uint64_t> parse_bandwidth(std::string_view s) {
  if (s == "unlimited" || s == "none" || s == "inf") return std::nullopt;
  return parse_u64(s, "bandwidths");
}

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string bandwidth_label(const std::optional<std::uint64_t>& bw) {
  if (!bw) return "unlimited";
  if (*bw % 1'000'000'000 == 0) return std::to_string(*bw / 1'000'000'000) + " Gbps";
  if (*bw % 1'000'000 == 0) return std::to_string(*bw / 1'000'000) + " Mbps";
  if (*bw % 1'000 == 0) return std::to_string(*bw / 1'000) + " kbps";
  return std::to_string(*bw) + " bps";
}

int transport_index(TransportKind k) { return static_cast<int>(k); }

double percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::max<std::size_t>(rank, 1) - 1];
}

double spread(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                      static_cast<double>(values.size());
  return mean == 0.0 ? 0.0 : (*hi - *lo) / mean;
}

std::vector<ResultRow> run_cell(const ExperimentConfig& cfg, std::size_t combo_id,
                                const Combo& combo, TransportKind kind,
                                std::optional<std::uint64_t> bandwidth) {
  PunchScenario s;
  s.transport = kind;
  s.rtt = combo.rtt;
  s.loss_rate = combo.loss_rate;
  s.start_offset = cfg.start_offset;
  s.seed = cell_seed(cfg.seed, combo, kind, bandwidth);
  TopologyConfig topo;
  topo.bandwidth_bps = bandwidth;
  topo.trace = false;
  const auto outcomes = run_trials(s, cfg.trials, topo, cfg.threads);
  std::vector<ResultRow> rows;
  rows.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const PunchOutcome& o = outcomes[i];
    ResultRow r;
    r.combo_id = combo_id;
    r.rtt = combo.rtt;
    r.loss_rate = combo.loss_rate;
    r.bandwidth_bps = bandwidth;
    r.transport = kind;
    r.trial = i;
    if (o.success) r.punch_time = o.elapsed;
    r.retransmissions = o.retransmission_count;
    r.success = o.success;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

std::vector<Combo> default_combos() {
  std::vector<Combo> out;
  for (int rtt : {20, 100, 200}) {
    for (double loss : {0.0, 0.01, 0.015, 0.02}) out.push_back({millis(rtt), loss});
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (trials < 1) bad_config("trials must be at least 1");
  if (combos.empty()) bad_config("no combos configured");
  if (transports.empty()) bad_config("no transports configured");
  for (const auto& c : combos) {
    if (c.rtt <= Duration::zero()) bad_config("every rtt must be positive");
    if (!(c.loss_rate >= 0.0 && c.loss_rate <= 1.0)) bad_config("loss rate outside [0,1]");
  }
  for (const auto& bw : bandwidths) {
    if (bw && *bw == 0) bad_config("bandwidth must be positive");
  }
  if (bandwidth_rtt <= Duration::zero()) bad_config("bandwidth rtt must be positive");
  for (const auto& r : recovery_rtts) {
    if (r <= Duration::zero()) bad_config("every recovery rtt must be positive");
  }
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  ExperimentConfig cfg = std::move(base);
  bool seen_format = false;
  bool combos_replaced = false;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      bad_config("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen_format) {
      if (key != "format") bad_config("the first setting must be 'format = 1'");
      if (value != "1") bad_config("unsupported format version '" + std::string(value) + "'");
      seen_format = true;
      continue;
    }
    if (key == "combo") {
      const auto parts = split(value, ',');
      if (parts.size() != 2) bad_config("combo needs rtt_ms,loss");
      if (!combos_replaced) {
        cfg.combos.clear();
        combos_replaced = true;
      }
      cfg.combos.push_back({from_ms(parse_double(parts[0], "combo")), parse_loss(parts[1])});
    } else if (key == "transports" || key == "transport") {
      cfg.transports.clear();
      for (auto t : split(value, ',')) {
        try {
          cfg.transports.push_back(parse_transport(t));
        } catch (const Error&) {
          bad_config("unknown transport '" + std::string(t) + "'");
        }
      }
    } else if (key == "trials") {
      cfg.trials = parse_u64(value, key);
    } else if (key == "seed") {
      cfg.seed = parse_u64(value, key);
    } else if (key == "bandwidths") {
      cfg.bandwidths.clear();
      for (auto b : split(value, ',')) cfg.bandwidths.push_back(parse_bandwidth(b));
    } else if (key == "bandwidth_rtt_ms") {
      cfg.bandwidth_rtt = from_ms(parse_double(value, key));
    } else if (key == "recovery_rtts_ms") {
      cfg.recovery_rtts.clear();
      for (auto r : split(value, ',')) cfg.recovery_rtts.push_back(from_ms(parse_double(r, key)));
    } else if (key == "offset_ms") {
      cfg.start_offset = from_ms(parse_double(value, key));
    } else if (key == "threads") {
      cfg.threads = static_cast<unsigned>(parse_u64(value, key));
    } else if (key == "out" || key == "output") {
      cfg.output_path = std::string(value);
    } else if (key == "format") {
      bad_config("format may only appear once");
    } else {
      bad_config("unknown key '" + std::string(key) + "'");
    }
  }
  if (!seen_format) bad_config("missing 'format = 1'");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::uint64_t cell_seed(std::uint64_t master, const Combo& combo, TransportKind kind,
                        std::optional<std::uint64_t> bandwidth) {
  return derive_seed({master, static_cast<std::uint64_t>(combo.rtt.count()),
                      std::bit_cast<std::uint64_t>(combo.loss_rate),
                      static_cast<std::uint64_t>(transport_index(kind)),
                      bandwidth.value_or(0)});
}

std::vector<ComboSummary> summarize(const std::vector<ResultRow>& rows) {
  std::vector<ComboSummary> out;
  std::vector<std::vector<double>> samples;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ComboSummary& s) {
      return s.combo_id == r.combo_id && s.transport == r.transport &&
             s.bandwidth_bps == r.bandwidth_bps;
    });
    if (it == out.end()) {
      ComboSummary s;
      s.combo_id = r.combo_id;
      s.rtt = r.rtt;
      s.loss_rate = r.loss_rate;
      s.bandwidth_bps = r.bandwidth_bps;
      s.transport = r.transport;
      out.push_back(s);
      samples.emplace_back();
      it = out.end() - 1;
    }
    auto& v = samples[static_cast<std::size_t>(it - out.begin())];
    ++it->trials;
    if (r.success && r.punch_time) {
      ++it->successes;
      v.push_back(to_ms(*r.punch_time));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& v = samples[i];
    std::sort(v.begin(), v.end());
    if (!v.empty()) {
      out[i].mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }
    out[i].p50_ms = percentile(v, 50);
    out[i].p95_ms = percentile(v, 95);
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  SweepResult result;
  for (std::size_t c = 0; c < cfg.combos.size(); ++c) {
    for (TransportKind kind : cfg.transports) {
      auto rows = run_cell(cfg, c + 1, cfg.combos[c], kind, std::nullopt);
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    }
  }
  result.summaries = summarize(result.rows);
  return result;
}

Duration predicted_serialization(TransportKind kind, std::optional<std::uint64_t> bandwidth) {
  const LinkSpec link{Duration::zero(), 0.0, bandwidth};
  const TransportOptions defaults;
  return link.serialization_delay(frame_size(MessageTag::kConnectRequest)) +
         link.serialization_delay(frame_size(MessageTag::kPeerInfo)) +
         flight_count(kind) * link.serialization_delay(defaults.flight_bytes);
}

BandwidthResult run_bandwidth_suite(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.bandwidths.empty()) bad_config("bandwidth suite needs at least one bandwidth");
  BandwidthResult result;
  const Combo combo{cfg.bandwidth_rtt, 0.0};
  for (std::size_t b = 0; b < cfg.bandwidths.size(); ++b) {
    for (TransportKind kind : cfg.transports) {
      auto rows = run_cell(cfg, b + 1, combo, kind, cfg.bandwidths[b]);
      result.sweep.rows.insert(result.sweep.rows.end(), rows.begin(), rows.end());
    }
  }
  result.sweep.summaries = summarize(result.sweep.rows);
  for (TransportKind kind : cfg.transports) {
    BandwidthSpread s;
    s.transport = kind;
    std::vector<double> adjusted;
    for (std::size_t b = 0; b < cfg.bandwidths.size(); ++b) {
      for (const auto& sum : result.sweep.summaries) {
        if (sum.combo_id == b + 1 && sum.transport == kind) {
          const double ser = to_ms(predicted_serialization(kind, cfg.bandwidths[b]));
          s.means_ms.push_back(sum.mean_ms);
          s.serialization_ms.push_back(ser);
          adjusted.push_back(sum.mean_ms - ser);
        }
      }
    }
    s.raw_spread = spread(s.means_ms);
    s.adjusted_spread = spread(adjusted);
    result.spreads.push_back(s);
  }
  return result;
}

RecoveryComparison run_recovery_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  RecoveryComparison out;
  const EndpointAddress moved = EndpointAddress::parse("192.168.0.3:7000");
  for (const Duration rtt : cfg.recovery_rtts) {
    auto fresh = [&](RecoveryScheme scheme) {
      PunchScenario s;
      s.rtt = rtt;
      s.seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(rtt.count())});
      TopologyConfig topo;
      topo.trace = false;
      PunchSession session(s, topo);
      const PunchOutcome o = session.punch();
      if (!o.success) fail(ErrorCode::kPunchFailed, "initial punch failed: " + o.failure_reason);
      const auto change = inject_address_change(session, "A", moved);
      switch (scheme) {
        case RecoveryScheme::kMigration: return migrate(session, change);
        case RecoveryScheme::kRepunchQuic: return repunch(session, change, TransportKind::kQuic);
        case RecoveryScheme::kRepunchTcp: break;
      }
      return repunch(session, change, TransportKind::kTcp);
    };
    const RecoveryReport mig = fresh(RecoveryScheme::kMigration);
    const RecoveryReport rq = fresh(RecoveryScheme::kRepunchQuic);
    const RecoveryReport rt = fresh(RecoveryScheme::kRepunchTcp);
    for (const auto* r : {&mig, &rq, &rt}) {
      if (!r->success) {
        fail(ErrorCode::kIdentityViolation,
             std::string(to_string(r->scheme)) + " did not restore connectivity");
      }
      if (r->legs.sum() != r->total) {
        fail(ErrorCode::kIdentityViolation, std::string(to_string(r->scheme)) +
                                                " total differs from the sum of its legs");
      }
      out.rows.push_back({rtt, *r});
    }
    out.deltas.emplace_back(delta(rq, mig), delta(rt, mig));
  }
  return out;
}

std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out(kSweepCsvHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.combo_id);
    out += ',' + format_ms(r.rtt);
    out += ',' + shortest(r.loss_rate);
    out += ',' + (r.bandwidth_bps ? std::to_string(*r.bandwidth_bps) : std::string());
    out += ',' + std::string(to_string(r.transport));
    out += ',' + std::to_string(r.trial);
    out += ',' + (r.punch_time ? format_ms(*r.punch_time) : std::string());
    out += ',' + std::to_string(r.retransmissions);
    out += r.success ? ",true\n" : ",false\n";
  }
  return out;
}

std::string to_csv(const RecoveryComparison& comparison) {
  std::string out(kRecoveryCsvHeader);
  out += '\n';
  auto opt = [](const std::optional<Duration>& d) { return d ? format_ms(*d) : std::string(); };
  for (const auto& row : comparison.rows) {
    const auto& r = row.report;
    out += format_ms(row.rtt) + ',' + std::string(to_string(r.scheme)) + ',' + opt(r.legs.t_a_s) +
           ',' + format_ms(r.legs.t_a2s) + ',' + format_ms(r.legs.t_s2b) + ',' +
           format_ms(r.legs.t_b2a) + ',' + opt(r.legs.t_a_b) + ',' + format_ms(r.legs.t_a2b) +
           ',' + format_ms(r.total) + ',' + (r.success ? "true" : "false") + '\n';
  }
  return out;
}

std::string format_summary(const std::vector<ComboSummary>& summaries) {
  std::string out = "combo  rtt_ms  loss    bandwidth   transport  mean_ms    p50_ms     p95_ms     success\n";
  for (const auto& s : summaries) {
    char line[256];
    std::snprintf(line, sizeof line, "%-6zu %-7s %-7s %-11s %-10s %-10s %-10s %-10s %.2f\n",
                  s.combo_id, format_ms(s.rtt).c_str(), shortest(s.loss_rate).c_str(),
                  bandwidth_label(s.bandwidth_bps).c_str(),
                  std::string(to_string(s.transport)).c_str(), fixed3(s.mean_ms).c_str(),
                  fixed3(s.p50_ms).c_str(), fixed3(s.p95_ms).c_str(), s.success_rate());
    out += line;
  }
  return out;
}

std::string format_bandwidth(const BandwidthResult& result,
                             const std::vector<std::optional<std::uint64_t>>& bandwidths) {
  std::string out;
  for (const auto& s : result.spreads) {
    out += std::string(to_string(s.transport)) + ":\n";
    for (std::size_t i = 0; i < s.means_ms.size() && i < bandwidths.size(); ++i) {
      out += "  " + bandwidth_label(bandwidths[i]) + ": mean " + fixed3(s.means_ms[i]) +
             " ms, predicted serialization " + fixed3(s.serialization_ms[i]) + " ms\n";
    }
    out += "  spread of means: raw " + fixed3(100.0 * s.raw_spread) + "%, serialization-adjusted " +
           fixed3(100.0 * s.adjusted_spread) + "%\n";
  }
  return out;
}

std::string format_recovery(const RecoveryComparison& comparison) {
  std::string out;
  for (const auto& row : comparison.rows) {
    out += "rtt " + format_ms(row.rtt) + " ms  " + std::string(to_string(row.report.scheme)) +
           ": total " + format_ms(row.report.total) + " ms (legs sum " +
           format_ms(row.report.legs.sum()) + " ms)\n";
  }
  for (std::size_t i = 0; i < comparison.deltas.size(); ++i) {
    const Duration rtt = comparison.rows.at(i * 3).rtt;
    out += "rtt " + format_ms(rtt) + " ms  delta re-punch QUIC vs migration " +
           format_ms(comparison.deltas[i].first) + " ms, re-punch TCP vs migration " +
           format_ms(comparison.deltas[i].second) + " ms\n";
  }
  return out;
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "failed writing " + path);
}

}  // namespace holepunch
