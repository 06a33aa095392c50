#include "twinbench/netem.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace twinbench::netem {

void DelayConfig::validate() const
{
    if (!(variation_ms >= 0.0) || !(base_ms >= variation_ms)) {
        throw std::invalid_argument("delay config needs base >= variation >= 0");
    }
}

double sample_delay(const DelayConfig& cfg, Rng& rng)
{
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return cfg.base_ms - cfg.variation_ms + 2.0 * cfg.variation_ms * unit;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string to_string(NodeKind kind)
{
    switch (kind) {
    case NodeKind::client:
        return "Client";
    case NodeKind::fog:
        return "Fog";
    case NodeKind::cloud:
        return "Cloud";
    }
    return "?";
}

std::string NodeId::to_string() const
{
    return netem::to_string(kind) + "#" + std::to_string(index);
}

NodeId parse_node(const std::string& text)
{
    const auto hash = text.find('#');
    std::string name = text.substr(0, hash);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    NodeId id;
    if (name == "client") {
        id.kind = NodeKind::client;
    } else if (name == "fog") {
        id.kind = NodeKind::fog;
    } else if (name == "cloud") {
        id.kind = NodeKind::cloud;
    } else {
        throw std::invalid_argument("unknown node '" + text + "'");
    }
    if (hash != std::string::npos) {
        id.index = static_cast<std::uint32_t>(std::stoul(text.substr(hash + 1)));
    }
    return id;
}

std::string Address::to_string() const
{
    return node.to_string() + ":" + std::to_string(port);
}

NetError::NetError(NetErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

VirtualNet::VirtualNet(std::uint64_t seed) : VirtualNet(seed, Options{}) {}

VirtualNet::VirtualNet(std::uint64_t seed, Options options) : seed_(seed), options_(options) {}

void VirtualNet::set_egress_delay(NodeId node, DelayConfig cfg)
{
    cfg.validate();
    egress_[node] = cfg;
}

void VirtualNet::attach(Address endpoint, Handler handler)
{
    endpoints_[endpoint] = std::move(handler);
}

bool VirtualNet::attached(const Address& endpoint) const
{
    return endpoints_.contains(endpoint);
}

Nanos VirtualNet::egress_delay(NodeId node)
{
    auto cfg = egress_.find(node);
    if (cfg == egress_.end()) {
        return Nanos{0};
    }
    auto rng = rngs_.find(node);
    if (rng == rngs_.end()) {
        const std::uint64_t salt = (static_cast<std::uint64_t>(node.kind) << 32) | node.index;
        rng = rngs_.emplace(node, Rng{mix_seed(seed_, salt)}).first;
    }
    return from_ms(sample_delay(cfg->second, rng->second));
}

void VirtualNet::send(const Address& from, const Address& to, Message bytes)
{
    if (!attached(from)) {
        throw NetError(NetErrc::unknown_endpoint, "unknown sender " + from.to_string());
    }
    auto target = endpoints_.find(to);
    if (target == endpoints_.end()) {
        throw NetError(NetErrc::unknown_endpoint, "unknown destination " + to.to_string());
    }
    // Traffic between endpoints on one node never crosses an interface.
    const Nanos delay = from.node == to.node ? Nanos{0} : egress_delay(from.node);
    Nanos& last = last_departure_[{from.node, to.node}];
    const Nanos departure = std::max(now_ + delay, last);
    last = departure;

    if (options_.record_trace) {
        trace_.push_back({now_, departure, from, to, bytes.size(), fnv1a(bytes)});
    }
    schedule_at(departure, [handler = &target->second, from, bytes = std::move(bytes)]() mutable {
        (*handler)(from, std::move(bytes));
    });
}

void VirtualNet::schedule_at(Nanos when, std::function<void()> action)
{
    events_.push_back({std::max(when, now_), next_sequence_++, std::move(action)});
    std::push_heap(events_.begin(), events_.end(), Later{});
}

void VirtualNet::schedule_after(Nanos delay, std::function<void()> action)
{
    schedule_at(now_ + delay, std::move(action));
}

Nanos VirtualNet::run_until_idle()
{
    run_until(Nanos::max());
    return now_;
}

bool VirtualNet::run_until(Nanos limit)
{
    while (!events_.empty() && events_.front().time <= limit) {
        if (processed_ >= options_.max_events) {
            throw NetError(NetErrc::livelock_guard,
                           "event budget of " + std::to_string(options_.max_events) + " exhausted");
        }
        std::pop_heap(events_.begin(), events_.end(), Later{});
        Event ev = std::move(events_.back());
        events_.pop_back();
        now_ = ev.time;
        ++processed_;
        ev.action();
    }
    return events_.empty();
}

} // namespace twinbench::netem
