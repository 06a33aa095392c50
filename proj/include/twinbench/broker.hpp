#pragma once

// Transport-independent MQTT broker core. The broker never touches sockets or
// clocks: transports feed it decoded packets with the current time and carry
// out the returned actions. That lets the same state machine run inside the
// virtual network (deterministic) and behind the TCP server.

#include "twinbench/mqtt_codec.hpp"
#include "twinbench/time.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace twinbench::broker {

using ConnectionId = std::uint64_t;

struct BrokerConfig {
    std::size_t max_inflight = 20;
    std::optional<std::size_t> queue_cap;            // nullopt: unbounded queue
    std::optional<double> delivery_rate_limit;       // deliveries per minute, per subscriber

    /// Throws std::invalid_argument on max_inflight == 0 or a rate below 1.
    void validate() const;
};

/// Continuous-refill token bucket holding at most rate/60 tokens.
class TokenBucket {
public:
    TokenBucket(double per_minute, Nanos now);

    bool try_take(Nanos now);
    /// Earliest time at which one whole token is available.
    Nanos ready_at(Nanos now) const;
    double tokens(Nanos now) const;

private:
    double capacity_;
    double per_ns_;
    double tokens_;
    Nanos last_;
};

struct Subscription {
    std::string filter;
    std::uint8_t granted_qos = 0;
};

struct Session {
    std::string client_id;
    ConnectionId connection = 0;
    std::vector<Subscription> subscriptions;
    std::map<mqtt::PacketId, mqtt::Publish> inflight;
    std::deque<mqtt::Publish> queue;
    mqtt::PacketId next_packet_id = 1;
    std::optional<TokenBucket> limiter;
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
};

struct Outbound {
    ConnectionId connection = 0;
    mqtt::Packet packet;
};

/// What a transport must do after feeding the broker a packet or a timer tick.
struct Actions {
    std::vector<Outbound> send;
    std::vector<ConnectionId> close;
};

enum class BrokerErrc {
    protocol_violation,
    no_session,
};

class BrokerError : public std::runtime_error {
public:
    BrokerError(BrokerErrc code, const std::string& what);
    BrokerErrc code() const noexcept { return code_; }

private:
    BrokerErrc code_;
};

struct BrokerStats {
    std::uint64_t publishes_in = 0;
    std::uint64_t deliveries = 0;
    std::uint64_t dropped = 0;
    std::uint64_t unknown_acks = 0;
};

class Broker {
public:
    explicit Broker(BrokerConfig config = {});

    const BrokerConfig& config() const noexcept { return config_; }

    /// Dispatches one packet received on `conn`. Throws BrokerError when the
    /// peer breaks the protocol; the transport must then drop the connection
    /// and call connection_closed().
    Actions handle(ConnectionId conn, const mqtt::Packet& packet, Nanos now);

    /// Emits deliveries that were waiting on the rate limiter.
    Actions on_timer(Nanos now);

    /// Time at which on_timer() can make progress, if anything is throttled.
    std::optional<Nanos> next_wakeup(Nanos now) const;

    void connection_closed(ConnectionId conn);

    /// Registers a clean session. Returns return code 2 for an empty client id
    /// (the session is not created). An existing session with the same id is
    /// discarded; its connection is reported through `replaced`.
    mqtt::ConnAck open_session(ConnectionId conn, const mqtt::Connect& connect,
                               std::optional<ConnectionId>* replaced = nullptr);

    mqtt::SubAck subscribe(std::string_view client_id, const mqtt::Subscribe& sub);

    /// Routes `pub` to every matching session (at most once per session) and
    /// appends immediately-deliverable packets to `out`.
    std::optional<mqtt::PubAck> publish_inbound(std::string_view client_id, const mqtt::Publish& pub,
                                                Nanos now, std::vector<Outbound>& out);

    /// Moves the queue head into the in-flight window when a slot and a rate
    /// token are available.
    std::optional<mqtt::Publish> deliver_next(std::string_view client_id, Nanos now);

    /// Frees the in-flight slot for `ack` and refills the window. Unknown ids
    /// are logged and ignored.
    void ack_inbound(std::string_view client_id, const mqtt::PubAck& ack, Nanos now,
                     std::vector<Outbound>& out);

    const Session* session(std::string_view client_id) const;
    std::size_t session_count() const noexcept { return sessions_.size(); }
    const BrokerStats& stats() const noexcept { return stats_; }

    /// Optional debug stream; receives `recv <client> <seq> <t_ns>` per inbound
    /// publish plus warnings.
    void set_debug_log(std::ostream* log) { debug_ = log; }

private:
    Session* find(std::string_view client_id);
    Session& require(std::string_view client_id);
    void pump(Session& s, Nanos now, std::vector<Outbound>& out);
    mqtt::PacketId allocate_id(Session& s);

    BrokerConfig config_;
    std::map<std::string, Session, std::less<>> sessions_;
    std::unordered_map<ConnectionId, std::string> by_connection_;
    BrokerStats stats_;
    std::ostream* debug_ = nullptr;
};

} // namespace twinbench::broker
