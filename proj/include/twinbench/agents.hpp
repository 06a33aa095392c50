#pragma once

// Workload endpoints: a data source publishing sequentially numbered messages
// on a fixed schedule and the twin instance subscribing to them. Both are
// written against small Transport/Executor interfaces so the same code runs on
// the virtual network and on real sockets.

#include "twinbench/mqtt_codec.hpp"
#include "twinbench/time.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace twinbench::agents {

enum class AgentErrc { payload_too_small, malformed_payload, invalid_config, connection_lost };

class AgentError : public std::runtime_error {
public:
    AgentError(AgentErrc code, const std::string& what);
    AgentErrc code() const noexcept { return code_; }

private:
    AgentErrc code_;
};

/// ASCII decimal `seq` padded with '.' to exactly `size` bytes.
mqtt::Bytes make_payload(std::uint64_t seq, std::size_t size);

/// Leading decimal digits of `payload`.
std::uint64_t parse_payload(std::span<const std::uint8_t> payload);

std::string default_topic(const std::string& client_id);

/// Second level of "dt/<client_id>/data", or nullopt for other shapes.
std::optional<std::string> client_from_topic(std::string_view topic);

std::size_t decimal_digits(std::uint64_t v);

struct SourceConfig {
    std::string client_id;
    std::uint64_t message_count = 0;
    Nanos interval{0};
    std::size_t payload_size = 64;
    std::string topic; // empty: default_topic(client_id)
    std::uint8_t qos = 1;

    void validate() const;
    std::string effective_topic() const { return topic.empty() ? default_topic(client_id) : topic; }
};

/// One line of a send or receive log.
struct LogRecord {
    std::string client_id;
    std::uint64_t seq = 0;
    Nanos timestamp{0};
    bool operator==(const LogRecord&) const = default;
};

using SendLog = std::vector<LogRecord>;
using RecvLog = std::vector<LogRecord>;

struct Gap {
    std::string client_id;
    std::uint64_t seq = 0;
    bool operator==(const Gap&) const = default;
};

struct IntegrityReport {
    std::uint64_t expected = 0;
    std::uint64_t received = 0;     // parsed receives, duplicates included
    std::vector<Gap> gaps;
    std::uint64_t duplicates = 0;
    std::uint64_t out_of_order = 0; // adjacent inversions per client
    std::uint64_t unparsed = 0;     // deliveries whose payload had no sequence number
    std::uint64_t unexpected = 0;   // unknown client or seq beyond the expected range

    bool clean() const { return gaps.empty() && duplicates == 0 && received == expected && unexpected == 0; }
    bool operator==(const IntegrityReport&) const = default;
};

/// `expected` maps client id -> message count; `recv` is in arrival order.
IntegrityReport check_integrity(const std::map<std::string, std::uint64_t>& expected, const RecvLog& recv,
                                std::uint64_t unparsed = 0);

/// Outbound half of an MQTT connection.
class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(const mqtt::Packet& packet) = 0;
};

/// Clock plus timer service. Sim mode implements it on the virtual network.
class Executor {
public:
    virtual ~Executor() = default;
    virtual Nanos now() const = 0;
    virtual void at(Nanos when, std::function<void()> action) = 0;
};

/// Publishes seq 0..count-1 at epoch + seq * interval. The send timestamp is
/// taken right before the publish is handed to the transport.
class Source {
public:
    Source(SourceConfig config, Transport& transport, Executor& executor);

    const SourceConfig& config() const noexcept { return config_; }

    void connect();
    /// Schedules the whole run relative to `epoch` (absolute executor time).
    void start(Nanos epoch);
    void on_packet(const mqtt::Packet& packet);
    /// Flags the log as partial; further scheduled publishes are skipped.
    void abort();

    bool connected() const noexcept { return connected_; }
    bool finished() const noexcept { return log_.size() == config_.message_count; }
    bool incomplete() const noexcept { return aborted_; }
    std::uint64_t acked() const noexcept { return acked_; }
    const SendLog& log() const noexcept { return log_; }

    mqtt::Publish make_publish(std::uint64_t seq);

private:
    void publish(std::uint64_t seq);

    SourceConfig config_;
    Transport& transport_;
    Executor& executor_;
    Nanos epoch_{0};
    SendLog log_;
    mqtt::PacketId next_id_ = 1;
    bool connected_ = false;
    bool aborted_ = false;
    std::uint64_t acked_ = 0;
};

/// Subscriber standing in for the digital twin. Records an arrival timestamp
/// for each delivery and acknowledges QoS 1 deliveries after recording.
class Twin {
public:
    Twin(std::string client_id, std::vector<mqtt::SubscribeEntry> subscriptions, Transport& transport,
         Executor& executor);

    void connect();
    void on_packet(const mqtt::Packet& packet);
    /// Receive timestamps are taken relative to `epoch`.
    void set_epoch(Nanos epoch) { epoch_ = epoch; }

    bool subscribed() const noexcept { return subscribed_; }
    const std::vector<std::uint8_t>& granted() const noexcept { return granted_; }
    const RecvLog& log() const noexcept { return log_; }
    std::uint64_t unparsed() const noexcept { return unparsed_; }
    std::uint64_t deliveries() const noexcept { return log_.size() + unparsed_; }
    IntegrityReport integrity(const std::map<std::string, std::uint64_t>& expected) const;

private:
    std::string client_id_;
    std::vector<mqtt::SubscribeEntry> subscriptions_;
    Transport& transport_;
    Executor& executor_;
    Nanos epoch_{0};
    bool connected_ = false;
    bool subscribed_ = false;
    std::vector<std::uint8_t> granted_;
    RecvLog log_;
    std::uint64_t unparsed_ = 0;
};

} // namespace twinbench::agents
