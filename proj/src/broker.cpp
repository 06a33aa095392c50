#include "twinbench/broker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace twinbench::broker {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Leading decimal digits of the payload, or -1; only used for the debug stream.
long long leading_number(const mqtt::Bytes& payload)
{
    long long v = -1;
    for (auto b : payload) {
        if (b < '0' || b > '9' || v > std::numeric_limits<long long>::max() / 10 - 10) {
            break;
        }
        v = (v < 0 ? 0 : v * 10) + (b - '0');
    }
    return v;
}

} // namespace

void BrokerConfig::validate() const
{
    if (max_inflight == 0 || max_inflight > 65535) {
        throw std::invalid_argument("max_inflight must be in 1..65535");
    }
    if (delivery_rate_limit && !(*delivery_rate_limit >= 1.0)) {
        throw std::invalid_argument("delivery rate limit must be at least 1 per minute");
    }
}

TokenBucket::TokenBucket(double per_minute, Nanos now)
    : capacity_(std::max(per_minute / 60.0, 1.0)), per_ns_(per_minute / 60e9), tokens_(capacity_),
      last_(now)
{
}

double TokenBucket::tokens(Nanos now) const
{
    const auto elapsed = static_cast<double>(std::max<std::int64_t>(0, (now - last_).count()));
    return std::min(capacity_, tokens_ + elapsed * per_ns_);
}

bool TokenBucket::try_take(Nanos now)
{
    tokens_ = tokens(now);
    last_ = std::max(last_, now);
    if (tokens_ < 1.0) {
        return false;
    }
    tokens_ -= 1.0;
    return true;
}

Nanos TokenBucket::ready_at(Nanos now) const
{
    const double have = tokens(now);
    if (have >= 1.0) {
        return now;
    }
    return now + Nanos{static_cast<std::int64_t>(std::ceil((1.0 - have) / per_ns_)) + 1};
}

BrokerError::BrokerError(BrokerErrc code, const std::string& what)
    : std::runtime_error(what), code_(code)
{
}

Broker::Broker(BrokerConfig config) : config_(config)
{
    config_.validate();
}

Session* Broker::find(std::string_view client_id)
{
    auto it = sessions_.find(client_id);
    return it == sessions_.end() ? nullptr : &it->second;
}

const Session* Broker::session(std::string_view client_id) const
{
    auto it = sessions_.find(client_id);
    return it == sessions_.end() ? nullptr : &it->second;
}

Session& Broker::require(std::string_view client_id)
{
    if (Session* s = find(client_id)) {
        return *s;
    }
    throw BrokerError(BrokerErrc::no_session, "no session for client '" + std::string(client_id) + "'");
}

mqtt::ConnAck Broker::open_session(ConnectionId conn, const mqtt::Connect& connect,
                                   std::optional<ConnectionId>* replaced)
{
    if (connect.client_id.empty()) {
        return mqtt::ConnAck{static_cast<std::uint8_t>(mqtt::ConnectReturn::identifier_rejected)};
    }
    if (auto it = sessions_.find(connect.client_id); it != sessions_.end()) {
        if (replaced && it->second.connection != conn) {
            *replaced = it->second.connection;
        }
        by_connection_.erase(it->second.connection);
        sessions_.erase(it);
    }
    Session s;
    s.client_id = connect.client_id;
    s.connection = conn;
    sessions_.emplace(s.client_id, std::move(s));
    by_connection_[conn] = connect.client_id;
    return mqtt::ConnAck{static_cast<std::uint8_t>(mqtt::ConnectReturn::accepted)};
}

mqtt::SubAck Broker::subscribe(std::string_view client_id, const mqtt::Subscribe& sub)
{
    Session& s = require(client_id);
    mqtt::SubAck ack{sub.packet_id, {}};
    ack.granted.reserve(sub.entries.size());
    for (const auto& entry : sub.entries) {
        if (!mqtt::is_valid_filter(entry.filter)) {
            ack.granted.push_back(mqtt::suback_failure);
            continue;
        }
        const auto granted = std::min<std::uint8_t>(entry.qos, 1);
        // A repeated filter replaces the earlier subscription.
        auto same = std::find_if(s.subscriptions.begin(), s.subscriptions.end(),
                                 [&](const Subscription& x) { return x.filter == entry.filter; });
        if (same != s.subscriptions.end()) {
            same->granted_qos = granted;
        } else {
            s.subscriptions.push_back({entry.filter, granted});
        }
        ack.granted.push_back(granted);
    }
    return ack;
}

std::optional<mqtt::PubAck> Broker::publish_inbound(std::string_view client_id, const mqtt::Publish& pub,
                                                    Nanos now, std::vector<Outbound>& out)
{
    require(client_id);
    if (!mqtt::is_valid_topic(pub.topic)) {
        throw BrokerError(BrokerErrc::protocol_violation, "invalid topic in PUBLISH: " + pub.topic);
    }
    ++stats_.publishes_in;
    if (debug_) {
        *debug_ << "recv " << client_id << ' ' << leading_number(pub.payload) << ' ' << now.count()
                << '\n';
    }

    for (auto& [id, s] : sessions_) {
        int best = -1;
        for (const auto& sub : s.subscriptions) {
            if (mqtt::topic_matches(sub.filter, pub.topic)) {
                best = std::max<int>(best, sub.granted_qos);
            }
        }
        if (best < 0) {
            continue;
        }
        mqtt::Publish copy{pub.topic, pub.payload, static_cast<std::uint8_t>(std::min<int>(pub.qos, best)),
                           std::nullopt, false, false};
        if (copy.qos == 0) {
            ++s.delivered;
            ++stats_.deliveries;
            out.push_back({s.connection, std::move(copy)});
            continue;
        }
        if (config_.delivery_rate_limit && !s.limiter) {
            s.limiter.emplace(*config_.delivery_rate_limit, now);
        }
        s.queue.push_back(std::move(copy));
        pump(s, now, out);
        if (config_.queue_cap && s.queue.size() > *config_.queue_cap) {
            s.queue.pop_back();
            ++s.dropped;
            ++stats_.dropped;
        }
    }

    if (pub.qos == 1 && pub.packet_id) {
        return mqtt::PubAck{*pub.packet_id};
    }
    return std::nullopt;
}

mqtt::PacketId Broker::allocate_id(Session& s)
{
    while (s.next_packet_id == 0 || s.inflight.contains(s.next_packet_id)) {
        ++s.next_packet_id;
    }
    return s.next_packet_id++;
}

std::optional<mqtt::Publish> Broker::deliver_next(std::string_view client_id, Nanos now)
{
    Session& s = require(client_id);
    if (s.queue.empty() || s.inflight.size() >= config_.max_inflight) {
        return std::nullopt;
    }
    if (s.limiter && !s.limiter->try_take(now)) {
        return std::nullopt;
    }
    mqtt::Publish pub = std::move(s.queue.front());
    s.queue.pop_front();
    pub.packet_id = allocate_id(s);
    s.inflight.emplace(*pub.packet_id, pub);
    ++s.delivered;
    ++stats_.deliveries;
    return pub;
}

void Broker::pump(Session& s, Nanos now, std::vector<Outbound>& out)
{
    while (auto pub = deliver_next(s.client_id, now)) {
        out.push_back({s.connection, std::move(*pub)});
    }
}

void Broker::ack_inbound(std::string_view client_id, const mqtt::PubAck& ack, Nanos now,
                         std::vector<Outbound>& out)
{
    Session& s = require(client_id);
    if (s.inflight.erase(ack.packet_id) == 0) {
        ++stats_.unknown_acks;
        if (debug_) {
            *debug_ << "warn unknown-puback " << client_id << ' ' << ack.packet_id << '\n';
        }
        return;
    }
    pump(s, now, out);
}

Actions Broker::handle(ConnectionId conn, const mqtt::Packet& packet, Nanos now)
{
    Actions actions;
    if (const auto* connect = std::get_if<mqtt::Connect>(&packet)) {
        if (by_connection_.contains(conn)) {
            throw BrokerError(BrokerErrc::protocol_violation, "second CONNECT on one connection");
        }
        std::optional<ConnectionId> replaced;
        const auto ack = open_session(conn, *connect, &replaced);
        actions.send.push_back({conn, ack});
        if (ack.return_code != 0) {
            actions.close.push_back(conn);
        }
        if (replaced) {
            actions.close.push_back(*replaced);
        }
        return actions;
    }

    auto owner = by_connection_.find(conn);
    if (owner == by_connection_.end()) {
        throw BrokerError(BrokerErrc::protocol_violation,
                          std::string(mqtt::packet_name(packet)) + " before CONNECT");
    }
    const std::string client_id = owner->second;

    std::visit(overloaded{
                   [&](const mqtt::Subscribe& sub) { actions.send.push_back({conn, subscribe(client_id, sub)}); },
                   [&](const mqtt::Publish& pub) {
                       std::vector<Outbound> deliveries;
                       if (auto ack = publish_inbound(client_id, pub, now, deliveries)) {
                           actions.send.push_back({conn, *ack});
                       }
                       std::move(deliveries.begin(), deliveries.end(), std::back_inserter(actions.send));
                   },
                   [&](const mqtt::PubAck& ack) { ack_inbound(client_id, ack, now, actions.send); },
                   [&](const mqtt::PingReq&) { actions.send.push_back({conn, mqtt::PingResp{}}); },
                   [&](const mqtt::Disconnect&) {
                       sessions_.erase(client_id);
                       by_connection_.erase(conn);
                       actions.close.push_back(conn);
                   },
                   [&](const auto& other) {
                       throw BrokerError(BrokerErrc::protocol_violation,
                                         std::string(mqtt::packet_name(other)) + " sent by a client");
                   },
               },
               packet);
    return actions;
}

Actions Broker::on_timer(Nanos now)
{
    Actions actions;
    for (auto& [id, s] : sessions_) {
        if (!s.queue.empty()) {
            pump(s, now, actions.send);
        }
    }
    return actions;
}

std::optional<Nanos> Broker::next_wakeup(Nanos now) const
{
    std::optional<Nanos> earliest;
    for (const auto& [id, s] : sessions_) {
        if (s.queue.empty() || s.inflight.size() >= config_.max_inflight || !s.limiter) {
            continue;
        }
        const Nanos t = s.limiter->ready_at(now);
        if (!earliest || t < *earliest) {
            earliest = t;
        }
    }
    return earliest;
}

void Broker::connection_closed(ConnectionId conn)
{
    auto it = by_connection_.find(conn);
    if (it == by_connection_.end()) {
        return;
    }
    sessions_.erase(it->second);
    by_connection_.erase(it);
}

} // namespace twinbench::broker
