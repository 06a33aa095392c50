#include "twinbench/agents.hpp"

#include <algorithm>
#include <set>

namespace twinbench::agents {

AgentError::AgentError(AgentErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}

std::size_t decimal_digits(std::uint64_t v)
{
    std::size_t n = 1;
    while (v >= 10) {
        v /= 10;
        ++n;
    }
    return n;
}

mqtt::Bytes make_payload(std::uint64_t seq, std::size_t size)
{
    const std::string digits = std::to_string(seq);
    if (digits.size() > size) {
        throw AgentError(AgentErrc::payload_too_small,
                         "sequence " + digits + " does not fit in " + std::to_string(size) + " bytes");
    }
    mqtt::Bytes payload(size, '.');
    std::copy(digits.begin(), digits.end(), payload.begin());
    return payload;
}

std::uint64_t parse_payload(std::span<const std::uint8_t> payload)
{
    std::uint64_t value = 0;
    std::size_t digits = 0;
    for (auto b : payload) {
        if (b < '0' || b > '9') {
            break;
        }
        if (value > (UINT64_MAX - 9) / 10) {
            throw AgentError(AgentErrc::malformed_payload, "sequence number overflows");
        }
        value = value * 10 + (b - '0');
        ++digits;
    }
    if (digits == 0) {
        throw AgentError(AgentErrc::malformed_payload, "payload has no leading sequence number");
    }
    return value;
}

std::string default_topic(const std::string& client_id)
{
    return "dt/" + client_id + "/data";
}

std::optional<std::string> client_from_topic(std::string_view topic)
{
    const auto first = topic.find('/');
    if (first == std::string_view::npos) {
        return std::nullopt;
    }
    const auto second = topic.find('/', first + 1);
    return std::string(topic.substr(first + 1, second == std::string_view::npos ? std::string_view::npos
                                                                                : second - first - 1));
}

void SourceConfig::validate() const
{
    if (client_id.empty()) {
        throw AgentError(AgentErrc::invalid_config, "source needs a client id");
    }
    if (interval.count() < 0) {
        throw AgentError(AgentErrc::invalid_config, "interval must be non-negative");
    }
    if (qos > 1) {
        throw AgentError(AgentErrc::invalid_config, "qos must be 0 or 1");
    }
    if (message_count > 0 && payload_size < decimal_digits(message_count - 1)) {
        throw AgentError(AgentErrc::payload_too_small,
                         "payload of " + std::to_string(payload_size) + " bytes cannot hold sequence " +
                             std::to_string(message_count - 1));
    }
    if (!mqtt::is_valid_topic(effective_topic())) {
        throw AgentError(AgentErrc::invalid_config, "invalid topic " + effective_topic());
    }
}

IntegrityReport check_integrity(const std::map<std::string, std::uint64_t>& expected, const RecvLog& recv,
                                std::uint64_t unparsed)
{
    IntegrityReport report;
    report.unparsed = unparsed;
    for (const auto& [client, count] : expected) {
        report.expected += count;
    }

    std::map<std::string, std::set<std::uint64_t>> seen;
    std::map<std::string, std::uint64_t> previous;
    for (const auto& r : recv) {
        ++report.received;
        auto limit = expected.find(r.client_id);
        if (limit == expected.end() || r.seq >= limit->second) {
            ++report.unexpected;
            continue;
        }
        if (!seen[r.client_id].insert(r.seq).second) {
            ++report.duplicates;
        }
        if (auto prev = previous.find(r.client_id); prev != previous.end() && r.seq < prev->second) {
            ++report.out_of_order;
        }
        previous[r.client_id] = r.seq;
    }

    for (const auto& [client, count] : expected) {
        const auto& got = seen[client];
        if (got.size() == count) {
            continue;
        }
        for (std::uint64_t seq = 0; seq < count; ++seq) {
            if (!got.contains(seq)) {
                report.gaps.push_back({client, seq});
            }
        }
    }
    return report;
}

Source::Source(SourceConfig config, Transport& transport, Executor& executor)
    : config_(std::move(config)), transport_(transport), executor_(executor)
{
    config_.validate();
    log_.reserve(config_.message_count);
}

void Source::connect()
{
    transport_.send(mqtt::Connect{config_.client_id, 60});
}

mqtt::Publish Source::make_publish(std::uint64_t seq)
{
    mqtt::Publish p;
    p.topic = config_.effective_topic();
    p.payload = make_payload(seq, config_.payload_size);
    p.qos = config_.qos;
    if (p.qos == 1) {
        if (next_id_ == 0) {
            next_id_ = 1;
        }
        p.packet_id = next_id_++;
    }
    return p;
}

void Source::start(Nanos epoch)
{
    epoch_ = epoch;
    if (config_.message_count > 0) {
        executor_.at(epoch_, [this] { publish(0); });
    }
}

void Source::publish(std::uint64_t seq)
{
    if (aborted_) {
        return;
    }
    auto packet = make_publish(seq);
    log_.push_back({config_.client_id, seq, executor_.now() - epoch_});
    transport_.send(packet);
    if (seq + 1 < config_.message_count) {
        const Nanos due = epoch_ + config_.interval * static_cast<std::int64_t>(seq + 1);
        executor_.at(due, [this, seq] { publish(seq + 1); });
    }
}

void Source::on_packet(const mqtt::Packet& packet)
{
    if (const auto* ack = std::get_if<mqtt::ConnAck>(&packet)) {
        connected_ = ack->return_code == 0;
    } else if (std::holds_alternative<mqtt::PubAck>(packet)) {
        ++acked_;
    }
}

void Source::abort()
{
    aborted_ = true;
}

Twin::Twin(std::string client_id, std::vector<mqtt::SubscribeEntry> subscriptions, Transport& transport,
           Executor& executor)
    : client_id_(std::move(client_id)), subscriptions_(std::move(subscriptions)), transport_(transport),
      executor_(executor)
{
}

void Twin::connect()
{
    transport_.send(mqtt::Connect{client_id_, 60});
}

void Twin::on_packet(const mqtt::Packet& packet)
{
    if (const auto* pub = std::get_if<mqtt::Publish>(&packet)) {
        const Nanos arrival = executor_.now() - epoch_;
        try {
            const std::uint64_t seq = parse_payload(pub->payload);
            log_.push_back({client_from_topic(pub->topic).value_or(pub->topic), seq, arrival});
        } catch (const AgentError&) {
            ++unparsed_;
        }
        if (pub->qos == 1 && pub->packet_id) {
            transport_.send(mqtt::PubAck{*pub->packet_id});
        }
    } else if (const auto* ack = std::get_if<mqtt::ConnAck>(&packet)) {
        connected_ = ack->return_code == 0;
        if (connected_) {
            transport_.send(mqtt::Subscribe{1, subscriptions_});
        }
    } else if (const auto* suback = std::get_if<mqtt::SubAck>(&packet)) {
        granted_ = suback->granted;
        subscribed_ = std::none_of(granted_.begin(), granted_.end(),
                                   [](std::uint8_t g) { return g == mqtt::suback_failure; });
    }
}

IntegrityReport Twin::integrity(const std::map<std::string, std::uint64_t>& expected) const
{
    return check_integrity(expected, log_, unparsed_);
}

} // namespace twinbench::agents
