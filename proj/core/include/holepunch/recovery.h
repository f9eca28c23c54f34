#pragma once

// Restoring A<->B connectivity after a client's address changes, either by
// migrating the live QUIC connection or by punching again from scratch.
// Every leg is measured per message from send to arrival.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "holepunch/puncher.h"

namespace holepunch {

enum class ChangeCause {
  kNetworkSwitch,  // new private address; the NAT forgets the old one
  kNatTimeout,     // only the punched session expires
  kNatReboot,      // the NAT loses its whole table
};

enum class RecoveryScheme {
  kMigration,
  kRepunchQuic,
  kRepunchTcp,
};

std::string_view to_string(ChangeCause cause);
std::string_view to_string(RecoveryScheme scheme);

struct AddressChangeEvent {
  std::string node;
  EndpointAddress old_private;
  EndpointAddress new_private;
  VirtualTime at;
  ChangeCause cause = ChangeCause::kNetworkSwitch;
};

struct RecoveryLegs {
  std::optional<Duration> t_a_s;  // new connection to S (re-punch only)
  Duration t_a2s{0};              // update reaches S
  Duration t_s2b{0};              // S's trigger reaches the peer
  Duration t_b2a{0};              // peer's trigger datagram reaches the mover's NAT
  std::optional<Duration> t_a_b;  // new peer connection (re-punch only)
  Duration t_a2b{0};              // first data reaches the peer

  Duration sum() const;
};

struct RecoveryReport {
  RecoveryScheme scheme = RecoveryScheme::kMigration;
  RecoveryLegs legs;
  Duration total{0};
  bool success = false;
  std::string connection_label;
  std::vector<std::uint64_t> cid_history;
};

// Moves a client ("A" or "B") to `new_private`, which must keep the client's
// port. Throws UnknownNode for names that are not nodes and InvalidArgument
// for non-client nodes or an address outside the client's subnet.
AddressChangeEvent inject_address_change(PunchSession& session, std::string_view node,
                                         const EndpointAddress& new_private,
                                         ChangeCause cause = ChangeCause::kNetworkSwitch);

// Requires a punched, established QUIC A<->B connection (NotQuic otherwise).
// Throws MigrationFailed when the peer never validates the new path.
RecoveryReport migrate(PunchSession& session, const AddressChangeEvent& change);

// Tears down the relay and peer connections of the moved client and punches
// again with `kind`. A failed attempt is reported with success = false.
RecoveryReport repunch(PunchSession& session, const AddressChangeEvent& change,
                       TransportKind kind);

// repunch.total - migrate.total. Throws TopologyMismatch when the reports
// are not (re-punch, migration) or their shared legs differ, and
// IdentityViolation when the difference is not T_A_S + T_A_B.
Duration delta(const RecoveryReport& repunch_report, const RecoveryReport& migrate_report);

}  // namespace holepunch
