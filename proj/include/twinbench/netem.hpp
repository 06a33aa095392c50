#pragma once

// Egress latency emulation in the style of tc-netem "delay <base> <jitter>",
// plus the deterministic virtual-time network used by sim mode.

#include "twinbench/time.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace twinbench::netem {

/// Uniform delay on [base - variation, base + variation] milliseconds.
struct DelayConfig {
    double base_ms = 0.0;
    double variation_ms = 0.0;

    /// Throws std::invalid_argument unless base >= variation >= 0.
    void validate() const;
    double mean_ms() const noexcept { return base_ms; }
    bool operator==(const DelayConfig&) const = default;
};

using Rng = std::mt19937_64;

/// One draw from `cfg`. The mapping from generator output to the interval is
/// fixed here (53-bit fraction) so a seed yields the same delays everywhere.
double sample_delay(const DelayConfig& cfg, Rng& rng);

/// splitmix64 finaliser, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

enum class NodeKind : std::uint8_t { client, fog, cloud };

struct NodeId {
    NodeKind kind = NodeKind::client;
    std::uint32_t index = 0;

    auto operator<=>(const NodeId&) const = default;
    bool operator==(const NodeId&) const = default;
    std::string to_string() const;
};

std::string to_string(NodeKind kind);
/// Accepts "client", "fog", "cloud" (any case) with an optional "#<index>".
NodeId parse_node(const std::string& text);

struct Address {
    NodeId node;
    std::uint16_t port = 0;

    auto operator<=>(const Address&) const = default;
    bool operator==(const Address&) const = default;
    std::string to_string() const;
};

enum class NetErrc { unknown_endpoint, livelock_guard };

class NetError : public std::runtime_error {
public:
    NetError(NetErrc code, const std::string& what);
    NetErrc code() const noexcept { return code_; }

private:
    NetErrc code_;
};

struct TraceEntry {
    Nanos sent{0};
    Nanos delivered{0};
    Address from;
    Address to;
    std::size_t size = 0;
    std::uint64_t digest = 0; // FNV-1a of the message bytes

    bool operator==(const TraceEntry&) const = default;
};

/// Single-threaded discrete-event network. Messages leave a node after that
/// node's sampled egress delay, never overtaking an earlier message on the same
/// ordered node pair. Ties are dispatched in insertion order.
class VirtualNet {
public:
    using Message = std::vector<std::uint8_t>;
    using Handler = std::function<void(const Address& from, Message bytes)>;

    struct Options {
        std::uint64_t max_events = 200'000'000;
        bool record_trace = false;
    };

    explicit VirtualNet(std::uint64_t seed);
    VirtualNet(std::uint64_t seed, Options options);

    void set_egress_delay(NodeId node, DelayConfig cfg);
    void attach(Address endpoint, Handler handler);
    bool attached(const Address& endpoint) const;

    /// Throws NetError(unknown_endpoint) if either side is not attached.
    void send(const Address& from, const Address& to, Message bytes);

    void schedule_at(Nanos when, std::function<void()> action);
    void schedule_after(Nanos delay, std::function<void()> action);

    /// Processes events until none remain and returns the final clock.
    /// Throws NetError(livelock_guard) once max_events have been dispatched.
    Nanos run_until_idle();

    /// Processes events stamped at or before `limit`. Returns true when the
    /// queue drained, false when events beyond `limit` remain.
    bool run_until(Nanos limit);
    bool idle() const noexcept { return events_.empty(); }

    Nanos now() const noexcept { return now_; }
    std::uint64_t events_processed() const noexcept { return processed_; }
    const std::vector<TraceEntry>& trace() const noexcept { return trace_; }

private:
    struct Event {
        Nanos time;
        std::uint64_t sequence;
        std::function<void()> action;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const
        {
            return a.time != b.time ? a.time > b.time : a.sequence > b.sequence;
        }
    };

    Nanos egress_delay(NodeId node);

    std::uint64_t seed_;
    Options options_;
    Nanos now_{0};
    std::uint64_t next_sequence_ = 0;
    std::uint64_t processed_ = 0;
    std::vector<Event> events_;
    std::map<Address, Handler> endpoints_;
    std::map<NodeId, DelayConfig> egress_;
    std::map<NodeId, Rng> rngs_;
    std::map<std::pair<NodeId, NodeId>, Nanos> last_departure_;
    std::vector<TraceEntry> trace_;
};

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes);

} // namespace twinbench::netem
