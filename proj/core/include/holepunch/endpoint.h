#pragma once

// Engine-driven transport endpoints. A Connection is one object shared by its
// two endpoints: each side keeps its own view (remote address, timers, data
// sequence state) while handshake completion is observed by both at the
// instant the completing flight arrives.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "holepunch/address.h"
#include "holepunch/error.h"
#include "holepunch/simnet.h"
#include "holepunch/transport.h"

namespace holepunch {

class Connection;
class Endpoint;

// What an endpoint needs from the node it runs on.
class PacketIo {
 public:
  virtual ~PacketIo() = default;
  virtual Engine& engine() = 0;
  virtual const std::string& node_name() const = 0;
  virtual IpAddress local_ip() const = 0;
  virtual void transmit(Datagram d) = 0;
};

// Per-world registry of connection ids. Every id a connection may use
// (active or pooled) resolves to it until retired.
class ConnectionDirectory {
 public:
  explicit ConnectionDirectory(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t mint_cid();
  std::uint64_t next_serial() { return ++serial_; }
  void attach(std::uint64_t cid, std::shared_ptr<Connection> conn);
  void retire(std::uint64_t cid);
  std::shared_ptr<Connection> find(std::uint64_t cid) const;

  void count_retransmission() { ++retransmissions_; }
  std::uint64_t retransmissions() const { return retransmissions_; }

 private:
  std::uint64_t seed_;
  std::uint64_t minted_ = 0;
  std::uint64_t serial_ = 0;
  std::uint64_t retransmissions_ = 0;
  std::unordered_map<std::uint64_t, std::shared_ptr<Connection>> cids_;
};

struct TransportOptions {
  RetransmissionPolicy policy;
  // Seeds the TCP retransmission timeout.
  Duration rtt_estimate = std::chrono::milliseconds(100);
  std::size_t flight_bytes = 1200;
  std::size_t control_bytes = 40;
  int cid_pool_size = 4;
  bool reuse_port = true;
};

enum class ConnectionState {
  kHandshaking,
  kEstablished,
  kFailed,
  kClosed,
};

std::string_view to_string(ConnectionState state);

struct PathValidationResult {
  bool validated = false;
  std::optional<ErrorCode> error;
  VirtualTime completed_at;
  EndpointAddress remote;
  std::uint64_t cid = 0;
};

using ConnectionPtr = std::shared_ptr<Connection>;

struct EndpointHandlers {
  std::function<void(const ConnectionPtr&)> on_established;
  std::function<void(const ConnectionPtr&, ErrorCode)> on_failed;
  std::function<void(const ConnectionPtr&, const Datagram&)> on_data;
  // Probe datagrams, with or without a connection tag.
  std::function<void(const Datagram&)> on_probe;
  // Anything that matched no live connection.
  std::function<void(const Datagram&)> on_stray;
};

class Endpoint {
 public:
  // Binds `port` for `kind`; throws PortInUse per the binding rules.
  Endpoint(PacketIo& io, ConnectionDirectory& directory, PortBindingTable& bindings,
           std::uint16_t port, TransportKind kind, TransportOptions options = {});
  ~Endpoint();

  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  PacketIo& io() const { return io_; }
  TransportKind kind() const { return kind_; }
  std::uint16_t port() const { return port_; }
  EndpointAddress local_address() const { return {io_.local_ip(), port_}; }
  const TransportOptions& options() const { return options_; }
  ConnectionDirectory& directory() const { return directory_; }

  void set_handlers(EndpointHandlers handlers) { handlers_ = std::move(handlers); }
  const EndpointHandlers& handlers() const { return handlers_; }

  // Starts a handshake toward `remote`. TCP kinds bind one more socket on
  // the local port, which requires port reuse.
  ConnectionPtr connect(const EndpointAddress& remote);

  // Connection-less probe datagram (opens NAT state, carries nothing).
  void send_probe(const EndpointAddress& to, std::uint32_t token = 0);

  void receive(const Datagram& d);

  const std::vector<ConnectionPtr>& connections() const { return connections_; }

 private:
  friend class Connection;

  void adopt(const ConnectionPtr& conn) { connections_.push_back(conn); }

  PacketIo& io_;
  ConnectionDirectory& directory_;
  PortBindingTable& bindings_;
  std::uint16_t port_;
  TransportKind kind_;
  TransportOptions options_;
  EndpointHandlers handlers_;
  std::vector<BindingHandle> held_;
  std::vector<ConnectionPtr> connections_;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  // Use Endpoint::connect.
  Connection(Endpoint& initiator, const EndpointAddress& remote);

  TransportKind kind() const { return kind_; }
  ConnectionState state() const { return state_; }
  bool established() const { return state_ == ConnectionState::kEstablished; }
  std::optional<ErrorCode> failure() const { return failure_; }
  const std::string& label() const { return label_; }

  VirtualTime started_at() const { return started_at_; }
  std::optional<VirtualTime> established_at() const { return established_at_; }

  Endpoint* initiator() const { return sides_[0].ep; }
  Endpoint* responder() const { return sides_[1].ep; }
  Endpoint* peer_of(const Endpoint& ep) const;
  EndpointAddress remote_of(const Endpoint& ep) const;

  std::uint64_t active_cid() const { return active_cid_; }
  // Every id that has been active on this connection, oldest first.
  const std::vector<std::uint64_t>& cid_history() const { return cid_history_; }
  const std::deque<std::uint64_t>& cid_pool() const { return cid_pool_; }

  std::uint64_t retransmissions() const { return retransmissions_; }
  std::size_t unsolicited_drops() const { return unsolicited_drops_; }
  void note_unsolicited_drop() { ++unsolicited_drops_; }

  // Reliable message; returns its sequence number. Throws InvalidArgument
  // unless established.
  std::uint32_t send(Endpoint& from, std::size_t payload_len,
                     std::vector<std::uint8_t> payload = {});
  bool all_acked(const Endpoint& from) const;

  // Challenges `new_remote` with a fresh id from the pool; on the matching
  // response the sender's remote is replaced and the active id rotated.
  // Throws NotQuic for TCP kinds and InvalidArgument unless established.
  void validate_path(Endpoint& from, const EndpointAddress& new_remote,
                     std::function<void(const PathValidationResult&)> done = {});
  bool validating(const Endpoint& from) const;

  // Unreliable probe on this connection toward `to`.
  void send_probe(Endpoint& from, const EndpointAddress& to);

  // Cancels all timers and retires every id; later datagrams are strays.
  void close();

  void on_datagram(Endpoint& at, const Datagram& d);

 private:
  friend class Endpoint;

  struct Outstanding {
    Datagram d;
    EventHandle timer;
    int attempts = 0;
  };
  struct Validation {
    EndpointAddress target;
    std::uint64_t cid = 0;
    std::uint32_t token = 0;
    EventHandle timer;
    int attempts = 0;
    std::function<void(const PathValidationResult&)> done;
  };
  struct Side {
    Endpoint* ep = nullptr;
    EndpointAddress remote;
    int received = -1;
    EventHandle hs_timer;
    int hs_flight = -1;
    int hs_attempts = 0;
    std::uint32_t next_seq = 0;
    std::map<std::uint32_t, Outstanding> unacked;
    std::set<std::uint32_t> delivered;
    std::optional<Validation> validation;
  };

  void start();
  Engine& engine() const { return engine_; }
  int side_of(const Endpoint& ep) const;
  EndpointAddress local_of(int side) const { return sides_[side].ep->local_address(); }
  Datagram make(int side, const EndpointAddress& to, MessageKind kind, std::size_t len,
                std::uint32_t seq) const;
  void emit(int side, Datagram d, bool retransmission);
  void note(int side, const std::string& event) const;
  Duration first_timeout() const;

  void send_flight(int side, int flight, bool retransmission);
  void arm_handshake_timer(int side);
  void on_handshake(int side, const Datagram& d);
  void establish();
  void fail_with(ErrorCode code, const std::string& why);
  void cancel_timers();

  void arm_data_timer(int side, std::uint32_t seq);
  void on_data(int side, const Datagram& d);
  void on_ack(int side, const Datagram& d);

  void send_challenge(int side);
  void on_challenge(int side, const Datagram& d);
  void on_response(int side, const Datagram& d);
  void finish_validation(int side, bool ok);
  void replenish_pool();

  Engine& engine_;
  ConnectionDirectory& directory_;
  TransportKind kind_;
  TransportOptions options_;
  std::string label_;
  ConnectionState state_ = ConnectionState::kHandshaking;
  std::optional<ErrorCode> failure_;
  VirtualTime started_at_;
  std::optional<VirtualTime> established_at_;
  Side sides_[2];
  std::uint64_t active_cid_ = 0;
  std::vector<std::uint64_t> cid_history_;
  std::deque<std::uint64_t> cid_pool_;
  std::uint32_t next_token_ = 0;
  std::uint64_t retransmissions_ = 0;
  std::size_t unsolicited_drops_ = 0;
};

// Sockets of one node, keyed by (port, UDP or TCP family), and the
// dispatch of arriving datagrams to them.
class SocketTable {
 public:
  SocketTable(PacketIo& io, ConnectionDirectory& directory, PortBindingTable& bindings)
      : io_(io), directory_(directory), bindings_(bindings) {}

  // Opens the listening endpoint, or returns the one already open.
  Endpoint& open(std::uint16_t port, TransportKind kind, TransportOptions options = {});
  Endpoint* find(std::uint16_t port, bool tcp) const;
  void deliver(const Datagram& d);

 private:
  PacketIo& io_;
  ConnectionDirectory& directory_;
  PortBindingTable& bindings_;
  std::map<std::pair<std::uint16_t, bool>, std::unique_ptr<Endpoint>> endpoints_;
};

// A node on a direct link: delivers whatever reaches its IP to its sockets.
class LinkedNode : public PacketIo {
 public:
  LinkedNode(Engine& engine, ConnectionDirectory& directory, PortBindingTable& bindings,
             std::string name, IpAddress ip);

  Engine& engine() override { return engine_; }
  const std::string& node_name() const override { return name_; }
  IpAddress local_ip() const override { return ip_; }
  void transmit(Datagram d) override;

  void connect_to(LinkedNode* peer, LinkId link) {
    peer_ = peer;
    link_ = link;
  }
  void set_ip(IpAddress ip) { ip_ = ip; }
  SocketTable& sockets() { return sockets_; }
  void receive(const Datagram& d);

 private:
  Engine& engine_;
  std::string name_;
  IpAddress ip_;
  LinkedNode* peer_ = nullptr;
  LinkId link_;
  SocketTable sockets_;
};

// Two nodes joined by one link per direction, each carrying RTT/2:
// I at 10.0.0.1:5000 initiates, R at 10.0.0.2:6000 responds.
class PointToPoint {
 public:
  static constexpr std::uint16_t kInitiatorPort = 5000;
  static constexpr std::uint16_t kResponderPort = 6000;

  PointToPoint(TransportKind kind, Duration rtt, TransportOptions options = {},
               std::uint64_t seed = 0, double loss_rate = 0.0);

  Engine& engine() { return engine_; }
  ConnectionDirectory& directory() { return directory_; }
  PortBindingTable& bindings() { return bindings_; }
  LinkedNode& initiator_node() { return i_node_; }
  LinkedNode& responder_node() { return r_node_; }
  Endpoint& initiator() { return *initiator_; }
  Endpoint& responder() { return *responder_; }
  LinkId forward_link() const { return forward_; }
  LinkId reverse_link() const { return reverse_; }

 private:
  Engine engine_;
  ConnectionDirectory directory_;
  PortBindingTable bindings_;
  LinkedNode i_node_;
  LinkedNode r_node_;
  LinkId forward_;
  LinkId reverse_;
  Endpoint* initiator_;
  Endpoint* responder_;
};

// Handshake duration on a direct link when each listed flight index loses
// one transmission (an index may repeat). Throws InvalidArgument for rtt <= 0
// or an index outside the flight schedule, and MaxRetriesExceeded when one
// flight is lost more than policy.max_retries times.
Duration handshake_duration(TransportKind kind, Duration rtt,
                            const std::vector<int>& lost_flights,
                            const RetransmissionPolicy& policy = {});

}  // namespace holepunch
