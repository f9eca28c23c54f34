#pragma once

// Experiment harness behind the holepunch-lab CLI: configuration, the
// RTT x loss sweep, the bandwidth suite, the recovery comparison, summary
// statistics and CSV output.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "holepunch/puncher.h"
#include "holepunch/recovery.h"

namespace holepunch {

struct Combo {
  Duration rtt;
  double loss_rate = 0.0;
};

// RTT {20, 100, 200} ms x loss {0, 1%, 1.5%, 2%}, RTT-major.
std::vector<Combo> default_combos();

struct ExperimentConfig {
  std::vector<Combo> combos = default_combos();
  std::vector<TransportKind> transports{TransportKind::kQuic, TransportKind::kTcp};
  std::size_t trials = 100;
  std::uint64_t seed = 42;
  // nullopt = uncapped.
  std::vector<std::optional<std::uint64_t>> bandwidths{
      std::nullopt, 10'000'000'000ULL, 100'000'000ULL, 1'000'000ULL};
  Duration bandwidth_rtt = std::chrono::milliseconds(20);
  std::vector<Duration> recovery_rtts{std::chrono::milliseconds(20),
                                      std::chrono::milliseconds(100),
                                      std::chrono::milliseconds(200)};
  Duration start_offset{0};
  unsigned threads = 1;
  std::string output_path;

  // Throws InvalidConfig.
  void validate() const;
};

// Line-oriented "key = value" text whose first setting is "format = 1".
// Repeated "combo = rtt_ms,loss" lines replace the default combos; loss may
// be a fraction or a percentage ("1.5%"). Throws InvalidConfig.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
// Throws IoFailure when the file cannot be read.
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

struct ResultRow {
  std::size_t combo_id = 0;
  Duration rtt;
  double loss_rate = 0.0;
  std::optional<std::uint64_t> bandwidth_bps;
  TransportKind transport = TransportKind::kQuic;
  std::size_t trial = 0;
  std::optional<Duration> punch_time;
  std::uint64_t retransmissions = 0;
  bool success = false;
};

struct ComboSummary {
  std::size_t combo_id = 0;
  Duration rtt;
  double loss_rate = 0.0;
  std::optional<std::uint64_t> bandwidth_bps;
  TransportKind transport = TransportKind::kQuic;
  std::size_t trials = 0;
  std::size_t successes = 0;
  // Over successful trials, in milliseconds.
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double success_rate() const {
    return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0;
  }
};

struct SweepResult {
  std::vector<ResultRow> rows;
  std::vector<ComboSummary> summaries;
};

inline constexpr std::string_view kSweepCsvHeader =
    "combo_id,rtt_ms,loss_rate,bandwidth_bps,transport,trial,punch_time_ms,retransmissions,"
    "success";
inline constexpr std::string_view kRecoveryCsvHeader =
    "rtt_ms,scheme,t_a_s_ms,t_a2s_ms,t_s2b_ms,t_b2a_ms,t_a_b_ms,t_a2b_ms,total_ms,success";

// Per-trial seed root for one (combo, transport, bandwidth) cell; depends on
// the cell's identity, not its position, so reordering combos is harmless.
std::uint64_t cell_seed(std::uint64_t master, const Combo& combo, TransportKind kind,
                        std::optional<std::uint64_t> bandwidth);

// Rows in (combo, transport, trial) order.
SweepResult run_sweep(const ExperimentConfig& cfg);

struct BandwidthSpread {
  TransportKind transport = TransportKind::kQuic;
  std::vector<double> means_ms;          // one per bandwidth, config order
  std::vector<double> serialization_ms;  // predicted on the critical path
  double raw_spread = 0.0;               // (max - min) / mean of means
  double adjusted_spread = 0.0;          // same after removing serialization
};

struct BandwidthResult {
  SweepResult sweep;
  std::vector<BandwidthSpread> spreads;
};

// Serialization on the punch critical path: CONNECT_REQUEST, PEER_INFO and
// every handshake flight, each crossing one capped uplink.
Duration predicted_serialization(TransportKind kind, std::optional<std::uint64_t> bandwidth);

BandwidthResult run_bandwidth_suite(const ExperimentConfig& cfg);

struct RecoveryRow {
  Duration rtt;
  RecoveryReport report;
};

struct RecoveryComparison {
  std::vector<RecoveryRow> rows;
  // Per RTT: delta(re-punch QUIC, migration) and delta(re-punch TCP, migration).
  std::vector<std::pair<Duration, Duration>> deltas;
};

// Throws IdentityViolation when a leg sum or delta identity fails.
RecoveryComparison run_recovery_compare(const ExperimentConfig& cfg);

std::string to_csv(const std::vector<ResultRow>& rows);
std::string to_csv(const RecoveryComparison& comparison);
std::string format_summary(const std::vector<ComboSummary>& summaries);
std::string format_bandwidth(const BandwidthResult& result,
                             const std::vector<std::optional<std::uint64_t>>& bandwidths);
std::string format_recovery(const RecoveryComparison& comparison);

std::vector<ComboSummary> summarize(const std::vector<ResultRow>& rows);

// Throws IoFailure.
void write_text_file(const std::string& path, std::string_view content);

}  // namespace holepunch
