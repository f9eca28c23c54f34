#include "holepunch/lab.h"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "holepunch/error.h"
#include "oracles.h"

namespace holepunch {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    out.push_back(cells);
  }
  return out;
}

TEST(ConfigTest, DefaultsMatchTheExperimentGrid) {
  const ExperimentConfig cfg;
  ASSERT_EQ(cfg.combos.size(), 12u);
  EXPECT_EQ(cfg.combos[0].rtt, millis(20));
  EXPECT_EQ(cfg.combos[0].loss_rate, 0.0);
  EXPECT_EQ(cfg.combos[3].loss_rate, 0.02);
  EXPECT_EQ(cfg.combos[4].rtt, millis(100));
  EXPECT_EQ(cfg.combos[11].rtt, millis(200));
  EXPECT_EQ(cfg.trials, 100u);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.bandwidths.size(), 4u);
}

TEST(ConfigTest, ParsesAllKeys) {
  const auto cfg = parse_config(
      "# comment\n"
      "format = 1\n"
      "combo = 50, 1.5%\n"
      "combo = 10,0.02   # trailing comment\n"
      "transports = quic, tcp-tls13\n"
      "trials = 7\n"
      "seed = 99\n"
      "bandwidths = unlimited, 1000000\n"
      "bandwidth_rtt_ms = 30\n"
      "recovery_rtts_ms = 10, 40\n"
      "offset_ms = -2.5\n"
      "threads = 2\n"
      "out = /tmp/x.csv\n");
  ASSERT_EQ(cfg.combos.size(), 2u);
  EXPECT_EQ(cfg.combos[0].rtt, millis(50));
  EXPECT_DOUBLE_EQ(cfg.combos[0].loss_rate, 0.015);
  EXPECT_DOUBLE_EQ(cfg.combos[1].loss_rate, 0.02);
  EXPECT_EQ(cfg.transports, (std::vector<TransportKind>{TransportKind::kQuic, TransportKind::kTcpTls13}));
  EXPECT_EQ(cfg.trials, 7u);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.bandwidths, (std::vector<std::optional<std::uint64_t>>{std::nullopt, 1'000'000}));
  EXPECT_EQ(cfg.bandwidth_rtt, millis(30));
  EXPECT_EQ(cfg.recovery_rtts, (std::vector<Duration>{millis(10), millis(40)}));
  EXPECT_EQ(cfg.start_offset, micros(-2500));
  EXPECT_EQ(cfg.threads, 2u);
  EXPECT_EQ(cfg.output_path, "/tmp/x.csv");
}

TEST(ConfigTest, RejectsBadInput) {
  for (const char* text : {"trials = 3\n", "format = 2\n", "format = 1\nformat = 1\n", "format = 1\nbogus = 1\n",
                           "format = 1\ntrials = 0\n", "format = 1\ncombo = 0,0\n", "format = 1\ncombo = 10,1.5\n",
                           "format = 1\ncombo = 10\n", "format = 1\ntrials = x\n", "format = 1\ntransports = sctp\n",
                           "format = 1\nno equals sign\n", "format = 1\ncombo = 10,-1%\n", "", "# only\n"}) {
    EXPECT_EQ(code_of([&] { parse_config(text); }), ErrorCode::kInvalidConfig) << text;
  }
}

TEST(ConfigTest, MissingFileIsIoFailure) {
  EXPECT_EQ(code_of([] { load_config("/nonexistent/dir/cfg.txt"); }), ErrorCode::kIoFailure);
}

TEST(ConfigTest, UnwritableOutputIsIoFailure) {
  EXPECT_EQ(code_of([] { write_text_file("/nonexistent/dir/out.csv", "x"); }), ErrorCode::kIoFailure);
}

TEST(SweepTest, DefaultSweepShapeAndCsv) {
  const ExperimentConfig cfg;
  const auto result = run_sweep(cfg);
  ASSERT_EQ(result.rows.size(), 2400u);
  const auto csv = parse_csv(to_csv(result.rows));
  ASSERT_EQ(csv.size(), 2401u);
  EXPECT_EQ(to_csv(result.rows).substr(0, kSweepCsvHeader.size()), kSweepCsvHeader);
  EXPECT_EQ(csv[0].size(), 9u);

  // Recompute per-cell means from the CSV text alone.
  std::map<std::pair<std::string, std::string>, std::vector<double>> by_cell;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const auto& r = csv[i];
    ASSERT_EQ(r.size(), 9u) << i;
    EXPECT_EQ(r[3], "");  // no bandwidth cap in the main sweep
    const bool ok = r[8] == "true";
    EXPECT_EQ(ok, !r[6].empty());
    if (ok) by_cell[{r[0], r[4]}].push_back(std::stod(r[6]));
  }
  ASSERT_EQ(result.summaries.size(), 24u);
  for (const auto& s : result.summaries) {
    const auto& xs = by_cell[{std::to_string(s.combo_id), std::string(to_string(s.transport))}];
    EXPECT_NEAR(s.mean_ms, oracle::mean(xs), 1e-9);
    EXPECT_DOUBLE_EQ(s.p50_ms, oracle::nearest_rank(xs, 50));
    EXPECT_DOUBLE_EQ(s.p95_ms, oracle::nearest_rank(xs, 95));
    EXPECT_EQ(s.trials, 100u);
    if (s.loss_rate == 0.0) {
      // No randomness without loss.
      for (double x : xs) EXPECT_EQ(x, xs.front());
    }
  }
}

TEST(SweepTest, MeansInAnalyticWindows) {
  ExperimentConfig cfg;
  cfg.combos = {{millis(100), 0.0}, {millis(200), 0.0}};
  const auto res = run_sweep(cfg);
  for (const auto& s : res.summaries) {
    const double rtt = to_ms(s.rtt);
    const double lo = s.transport == TransportKind::kQuic ? 2.0 : 2.5;
    EXPECT_GE(s.mean_ms, lo * rtt);
    EXPECT_LE(s.mean_ms, (lo + 0.5) * rtt);
    EXPECT_EQ(s.success_rate(), 1.0);
  }
}

TEST(SweepTest, ByteIdenticalReplayAndThreadInvariance) {
  ExperimentConfig cfg;
  cfg.trials = 20;
  const auto a = to_csv(run_sweep(cfg).rows);
  const auto b = to_csv(run_sweep(cfg).rows);
  cfg.threads = 3;
  const auto c = to_csv(run_sweep(cfg).rows);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  cfg.seed = 43;
  EXPECT_NE(a, to_csv(run_sweep(cfg).rows));
}

TEST(SweepTest, ReorderingCombosKeepsTrialOutcomes) {
  ExperimentConfig cfg;
  cfg.trials = 30;
  cfg.combos = {{millis(20), 0.02}, {millis(100), 0.015}};
  const auto fwd = run_sweep(cfg).rows;
  std::swap(cfg.combos[0], cfg.combos[1]);
  const auto rev = run_sweep(cfg).rows;
  ASSERT_EQ(fwd.size(), rev.size());
  auto key = [](const ResultRow& r) { return std::make_tuple(r.rtt, r.transport, r.trial); };
  std::map<decltype(key(fwd[0])), ResultRow> index;
  for (const auto& r : rev) index[key(r)] = r;
  for (const auto& r : fwd) {
    const auto& o = index.at(key(r));
    EXPECT_EQ(o.punch_time, r.punch_time);
    EXPECT_EQ(o.retransmissions, r.retransmissions);
  }
}

TEST(SweepTest, RowCountIsProduct) {
  ExperimentConfig cfg;
  cfg.trials = 3;
  cfg.combos = {{millis(10), 0.0}, {millis(30), 0.5}, {millis(50), 0.01}};
  cfg.transports = {TransportKind::kQuic, TransportKind::kTcp, TransportKind::kTcpTls13};
  EXPECT_EQ(run_sweep(cfg).rows.size(), 27u);
}

TEST(BandwidthTest, SerializationAccounting) {
  EXPECT_EQ(predicted_serialization(TransportKind::kQuic, std::nullopt), Duration::zero());
  // Two control frames plus every handshake flight, one capped uplink each.
  const auto one = predicted_serialization(TransportKind::kQuic, 1'000'000);
  EXPECT_EQ(one.count(), oracle::serialization(19, 1'000'000) + oracle::serialization(17, 1'000'000) +
                             2 * oracle::serialization(1200, 1'000'000));
  EXPECT_EQ(oracle::serialization(1200, 1'000'000), 9'600'000);
}

TEST(BandwidthTest, SpreadSmallOnceSerializationIsAccounted) {
  ExperimentConfig cfg;
  cfg.trials = 10;
  const auto r = run_bandwidth_suite(cfg);
  EXPECT_EQ(r.sweep.rows.size(), 4u * 2u * 10u);
  ASSERT_EQ(r.spreads.size(), 2u);
  for (const auto& s : r.spreads) {
    EXPECT_LT(s.adjusted_spread, 0.01);
    EXPECT_EQ(s.means_ms.size(), 4u);
  }
  for (const auto& row : r.sweep.rows) EXPECT_EQ(row.rtt, millis(20));
}

TEST(BandwidthTest, EmptyListRejected) {
  ExperimentConfig cfg;
  cfg.bandwidths.clear();
  EXPECT_EQ(code_of([&] { run_bandwidth_suite(cfg); }), ErrorCode::kInvalidConfig);
}

TEST(RecoveryCompareTest, DeltasScaleWithRtt) {
  ExperimentConfig cfg;
  const auto cmp = run_recovery_compare(cfg);
  ASSERT_EQ(cmp.rows.size(), 9u);
  ASSERT_EQ(cmp.deltas.size(), 3u);
  const std::int64_t rtts[] = {20, 100, 200};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cmp.deltas[i].first, millis(rtts[i]) * 2);
    EXPECT_EQ(cmp.deltas[i].second, millis(rtts[i]) * 3);
  }
  const auto csv = parse_csv(to_csv(cmp));
  ASSERT_EQ(csv.size(), 10u);
  EXPECT_EQ(to_csv(cmp).substr(0, kRecoveryCsvHeader.size()), kRecoveryCsvHeader);
}

}  // namespace
}  // namespace holepunch
