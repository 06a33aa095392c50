#include "twinbench/agents.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace twinbench;
using namespace twinbench::agents;

namespace {

struct RecordingTransport final : Transport {
    std::vector<mqtt::Packet> sent;
    std::function<void()> on_send;
    void send(const mqtt::Packet& p) override
    {
        sent.push_back(p);
        if (on_send) {
            on_send();
        }
    }
};

// Manual clock: run() fires timers in time order.
struct ManualExecutor final : Executor {
    Nanos clock{0};
    std::multimap<Nanos, std::function<void()>> timers;
    Nanos now() const override { return clock; }
    void at(Nanos when, std::function<void()> f) override { timers.emplace(when, std::move(f)); }
    void run()
    {
        while (!timers.empty()) {
            auto it = timers.begin();
            clock = std::max(clock, it->first);
            auto f = std::move(it->second);
            timers.erase(it);
            f();
        }
    }
};

Nanos ms(std::int64_t v)
{
    return Nanos{v * 1'000'000};
}

} // namespace

TEST_CASE("payload encoding")
{
    CHECK(make_payload(42, 5) == mqtt::Bytes{'4', '2', '.', '.', '.'});
    CHECK(make_payload(0, 1) == mqtt::Bytes{'0'});
    CHECK_THROWS_AS(make_payload(100, 2), AgentError);
    const auto p = make_payload(123456, 64);
    CHECK(p.size() == 64);
    CHECK(parse_payload(p) == 123456);
    CHECK_THROWS_AS(parse_payload(mqtt::Bytes{'x'}), AgentError);
    CHECK_THROWS_AS(parse_payload(mqtt::Bytes{}), AgentError);
    CHECK(decimal_digits(0) == 1);
    CHECK(decimal_digits(9) == 1);
    CHECK(decimal_digits(10) == 2);
    CHECK(decimal_digits(99999) == 5);
}

TEST_CASE("topic helpers")
{
    CHECK(default_topic("c1") == "dt/c1/data");
    CHECK(client_from_topic("dt/c1/data") == "c1");
    CHECK_FALSE(client_from_topic("flat"));
}

TEST_CASE("source config validation")
{
    SourceConfig ok{"c1", 1000, ms(10), 8, "", 1};
    CHECK_NOTHROW(ok.validate());
    SourceConfig small = ok;
    small.payload_size = 2;
    CHECK_THROWS_AS(small.validate(), AgentError);
    SourceConfig noid = ok;
    noid.client_id.clear();
    CHECK_THROWS_AS(noid.validate(), AgentError);
    SourceConfig badqos = ok;
    badqos.qos = 2;
    CHECK_THROWS_AS(badqos.validate(), AgentError);
}

TEST_CASE("source publishes on schedule and stamps before sending")
{
    RecordingTransport t;
    ManualExecutor ex;
    ex.clock = ms(500);
    Source src({"c1", 5, ms(80), 16, "", 1}, t, ex);
    src.connect();
    CHECK(std::get<mqtt::Connect>(t.sent.at(0)).client_id == "c1");
    src.on_packet(mqtt::ConnAck{0});
    CHECK(src.connected());

    // Sending costs 1 ms of clock; the log must carry the pre-send time.
    t.on_send = [&] { ex.clock += ms(1); };
    src.start(ms(1000));
    ex.run();
    REQUIRE(src.finished());
    const auto& log = src.log();
    for (std::uint64_t k = 0; k < 5; ++k) {
        CHECK(log[k].seq == k);
        CHECK(log[k].timestamp == ms(80 * static_cast<std::int64_t>(k)));
    }
    std::set<mqtt::PacketId> ids;
    for (std::size_t i = 1; i < t.sent.size(); ++i) {
        const auto& p = std::get<mqtt::Publish>(t.sent[i]);
        CHECK(p.topic == "dt/c1/data");
        CHECK(p.payload.size() == 16);
        ids.insert(*p.packet_id);
    }
    CHECK(ids.size() == 5);
}

TEST_CASE("aborted source stops publishing")
{
    RecordingTransport t;
    ManualExecutor ex;
    Source src({"c1", 10, ms(10), 8, "", 0}, t, ex);
    src.start(ms(0));
    ex.timers.begin()->second();
    ex.timers.erase(ex.timers.begin());
    src.abort();
    ex.run();
    CHECK(src.log().size() == 1);
    CHECK(src.incomplete());
    CHECK_FALSE(src.finished());
}

TEST_CASE("twin subscribes after connack, records, then acks")
{
    RecordingTransport t;
    ManualExecutor ex;
    Twin twin("twin", {{"dt/+/data", 1}}, t, ex);
    twin.connect();
    twin.on_packet(mqtt::ConnAck{0});
    const auto& sub = std::get<mqtt::Subscribe>(t.sent.at(1));
    CHECK(sub.entries == std::vector<mqtt::SubscribeEntry>{{"dt/+/data", 1}});
    twin.on_packet(mqtt::SubAck{1, {1}});
    CHECK(twin.subscribed());

    twin.set_epoch(ms(100));
    ex.clock = ms(250);
    std::size_t logged_at_ack = 0;
    t.on_send = [&] { logged_at_ack = twin.log().size(); };
    mqtt::Publish p{"dt/c2/data", make_payload(7, 8), 1, 33, false, false};
    twin.on_packet(p);
    CHECK(logged_at_ack == 1);
    CHECK(std::get<mqtt::PubAck>(t.sent.back()).packet_id == 33);
    CHECK(twin.log().at(0) == LogRecord{"c2", 7, ms(150)});

    twin.on_packet(mqtt::Publish{"dt/c2/data", {'?'}, 0, std::nullopt, false, false});
    CHECK(twin.unparsed() == 1);
    CHECK(twin.deliveries() == 2);
}

TEST_CASE("failed subscription is visible")
{
    RecordingTransport t;
    ManualExecutor ex;
    Twin twin("twin", {{"dt/+/data", 1}}, t, ex);
    twin.on_packet(mqtt::SubAck{1, {0x80}});
    CHECK_FALSE(twin.subscribed());
}

TEST_CASE("integrity report")
{
    const std::map<std::string, std::uint64_t> expected{{"c1", 4}, {"c2", 2}};
    SUBCASE("clean")
    {
        const RecvLog recv{{"c1", 0, {}}, {"c2", 0, {}}, {"c1", 1, {}}, {"c1", 2, {}}, {"c2", 1, {}}, {"c1", 3, {}}};
        const auto r = check_integrity(expected, recv);
        CHECK(r.clean());
        CHECK(r.received == 6);
        CHECK(r.expected == 6);
    }
    SUBCASE("gaps, duplicates, inversions, strangers")
    {
        const RecvLog recv{{"c1", 0, {}}, {"c1", 2, {}}, {"c1", 1, {}}, {"c1", 2, {}}, {"zz", 0, {}}, {"c2", 5, {}}};
        const auto r = check_integrity(expected, recv, 1);
        CHECK(r.gaps == std::vector<Gap>{{"c1", 3}, {"c2", 0}, {"c2", 1}});
        CHECK(r.duplicates == 1);
        CHECK(r.out_of_order == 1);
        CHECK(r.unexpected == 2);
        CHECK(r.unparsed == 1);
        CHECK_FALSE(r.clean());
    }
}
