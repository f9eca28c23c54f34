// holepunch-lab: runs hole-punching experiments on the simulated topology.
//
//   holepunch-lab sweep      [--config f] [--rtt ms --loss p] [--transport t] [--out f]
//   holepunch-lab bandwidth  [--config f] [--rtt ms] [--transport t] [--out f]
//   holepunch-lab recovery   [--config f] [--rtt ms] [--out f]
//   holepunch-lab punch      [--rtt ms] [--loss p] [--transport t] [--offset ms] [--out f]

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "holepunch/error.h"
#include "holepunch/lab.h"

namespace {

using holepunch::ErrorCode;

struct Flags {
  std::optional<double> rtt_ms;
  std::optional<std::string> loss;
  std::optional<std::string> transport;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::optional<double> offset_ms;
  std::optional<unsigned> threads;
  std::string config;
  std::string out;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "experiment config file (format = 1)");
  cmd->add_option("--rtt", f.rtt_ms, "round-trip time in milliseconds");
  cmd->add_option("--loss", f.loss, "loss rate as a fraction or percentage (1.5%)");
  cmd->add_option("--transport", f.transport, "quic, tcp or tcp-tls13");
  cmd->add_option("--trials", f.trials, "punches per combination");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--offset", f.offset_ms, "ConnA minus ConnB departure, milliseconds");
  cmd->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  cmd->add_option("--out", f.out, "output file (CSV, or trace for punch)");
}

double parse_loss(const std::string& text) {
  // Reuse the config grammar so "1.5%" and "0.015" mean the same thing.
  auto cfg = holepunch::parse_config("format = 1\ncombo = 1," + text + "\n");
  return cfg.combos.front().loss_rate;
}

holepunch::ExperimentConfig build_config(const Flags& f) {
  holepunch::ExperimentConfig cfg;
  if (!f.config.empty()) cfg = holepunch::load_config(f.config);
  if (f.rtt_ms || f.loss) {
    const holepunch::Duration rtt = f.rtt_ms ? holepunch::from_ms(*f.rtt_ms)
                                             : holepunch::millis(100);
    const double loss = f.loss ? parse_loss(*f.loss) : 0.0;
    cfg.combos = {{rtt, loss}};
    cfg.bandwidth_rtt = rtt;
    cfg.recovery_rtts = {rtt};
  }
  if (f.transport) {
    try {
      cfg.transports = {holepunch::parse_transport(*f.transport)};
    } catch (const holepunch::Error& e) {
      holepunch::fail(ErrorCode::kInvalidConfig, e.what());
    }
  }
  if (f.trials) cfg.trials = *f.trials;
  if (f.seed) cfg.seed = *f.seed;
  if (f.offset_ms) cfg.start_offset = holepunch::from_ms(*f.offset_ms);
  if (f.threads) cfg.threads = *f.threads;
  if (!f.out.empty()) cfg.output_path = f.out;
  cfg.validate();
  return cfg;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
  } else {
    holepunch::write_text_file(path, content);
    std::cerr << "wrote " << path << "\n";
  }
}

int run_punch(const holepunch::ExperimentConfig& cfg) {
  holepunch::PunchScenario s;
  s.transport = cfg.transports.front();
  s.rtt = cfg.combos.front().rtt;
  s.loss_rate = cfg.combos.front().loss_rate;
  s.start_offset = cfg.start_offset;
  s.seed = cfg.seed;
  const holepunch::PunchOutcome o = holepunch::punch(s);
  emit(cfg.output_path, holepunch::format_trace(o.trace));
  const auto [lo, hi] = holepunch::predicted_bounds(s.transport, s.rtt);
  if (o.success) {
    std::cerr << "punched via " << o.winner << " in " << holepunch::format_ms(o.elapsed)
              << " ms (bounds " << holepunch::format_ms(lo) << ".." << holepunch::format_ms(hi)
              << " ms), retransmissions " << o.retransmission_count << ", NAT drops "
              << o.unsolicited_drops << "\n";
    return 0;
  }
  std::cerr << "punch failed: " << o.failure_reason << "\n";
  return 1;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidArgument: return 2;
    case ErrorCode::kIoFailure: return 3;
    case ErrorCode::kIdentityViolation:
    case ErrorCode::kTopologyMismatch: return 4;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hole-punching laboratory on a deterministic network simulator"};
  app.require_subcommand(1);
  Flags flags;
  auto* sweep = app.add_subcommand("sweep", "RTT x loss sweep, one CSV row per trial");
  auto* bandwidth = app.add_subcommand("bandwidth", "lossless punches across bandwidth caps");
  auto* recovery = app.add_subcommand("recovery", "migration vs re-punching after an address change");
  auto* single = app.add_subcommand("punch", "one punch with its event trace");
  for (auto* cmd : {sweep, bandwidth, recovery, single}) add_flags(cmd, flags);
  CLI11_PARSE(app, argc, argv);

  try {
    const holepunch::ExperimentConfig cfg = build_config(flags);
    if (sweep->parsed()) {
      const auto result = holepunch::run_sweep(cfg);
      emit(cfg.output_path, holepunch::to_csv(result.rows));
      std::cerr << holepunch::format_summary(result.summaries);
    } else if (bandwidth->parsed()) {
      const auto result = holepunch::run_bandwidth_suite(cfg);
      emit(cfg.output_path, holepunch::to_csv(result.sweep.rows));
      std::cerr << holepunch::format_summary(result.sweep.summaries)
                << holepunch::format_bandwidth(result, cfg.bandwidths);
    } else if (recovery->parsed()) {
      const auto result = holepunch::run_recovery_compare(cfg);
      emit(cfg.output_path, holepunch::to_csv(result));
      std::cerr << holepunch::format_recovery(result);
    } else {
      return run_punch(cfg);
    }
  } catch (const holepunch::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  }
  return 0;
}
