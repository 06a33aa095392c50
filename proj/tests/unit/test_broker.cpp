#include "twinbench/broker.hpp"

#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

using namespace twinbench;
using namespace twinbench::broker;
using mqtt::Publish;

namespace {

constexpr ConnectionId pub_conn = 1;
constexpr ConnectionId sub_conn = 2;

Publish publish(std::string topic, std::uint64_t n, std::uint8_t qos = 1, mqtt::PacketId id = 1)
{
    Publish p;
    p.topic = std::move(topic);
    const auto digits = std::to_string(n);
    p.payload.assign(digits.begin(), digits.end());
    p.qos = qos;
    if (qos == 1) {
        p.packet_id = id;
    }
    return p;
}

std::vector<Publish> deliveries_to(const Actions& a, ConnectionId conn)
{
    std::vector<Publish> out;
    for (const auto& o : a.send) {
        if (o.connection == conn) {
            if (const auto* p = std::get_if<Publish>(&o.packet)) {
                out.push_back(*p);
            }
        }
    }
    return out;
}

// Publisher "src" and subscriber "sub" on "dt/+/data".
void setup(Broker& b, std::uint8_t sub_qos = 1)
{
    b.handle(pub_conn, mqtt::Connect{"src", 60}, Nanos{0});
    b.handle(sub_conn, mqtt::Connect{"sub", 60}, Nanos{0});
    b.handle(sub_conn, mqtt::Subscribe{1, {{"dt/+/data", sub_qos}}}, Nanos{0});
}

} // namespace

TEST_CASE("connect, subscribe, ping, disconnect")
{
    Broker b;
    auto a = b.handle(sub_conn, mqtt::Connect{"sub", 60}, Nanos{0});
    REQUIRE(a.send.size() == 1);
    CHECK(std::get<mqtt::ConnAck>(a.send[0].packet).return_code == 0);

    a = b.handle(sub_conn, mqtt::Subscribe{7, {{"dt/+/data", 1}, {"a/#/b", 0}, {"x", 2}}}, Nanos{0});
    CHECK(std::get<mqtt::SubAck>(a.send[0].packet) == mqtt::SubAck{7, {1, 0x80, 1}});

    a = b.handle(sub_conn, mqtt::PingReq{}, Nanos{0});
    CHECK(std::holds_alternative<mqtt::PingResp>(a.send[0].packet));

    a = b.handle(sub_conn, mqtt::Disconnect{}, Nanos{0});
    CHECK(a.close == std::vector<ConnectionId>{sub_conn});
    CHECK(b.session_count() == 0);
}

TEST_CASE("empty client id is rejected and the connection closed")
{
    Broker b;
    const auto a = b.handle(3, mqtt::Connect{"", 60}, Nanos{0});
    CHECK(std::get<mqtt::ConnAck>(a.send[0].packet).return_code == 2);
    CHECK(a.close == std::vector<ConnectionId>{3});
    CHECK(b.session_count() == 0);
}

TEST_CASE("reconnect replaces the session and closes the old connection")
{
    Broker b;
    b.handle(1, mqtt::Connect{"dev", 60}, Nanos{0});
    b.handle(1, mqtt::Subscribe{1, {{"t", 1}}}, Nanos{0});
    const auto a = b.handle(9, mqtt::Connect{"dev", 60}, Nanos{0});
    CHECK(a.close == std::vector<ConnectionId>{1});
    CHECK(b.session("dev")->connection == 9);
    CHECK(b.session("dev")->subscriptions.empty());
    CHECK_THROWS_AS(b.handle(1, mqtt::PingReq{}, Nanos{0}), BrokerError);
}

TEST_CASE("protocol violations")
{
    Broker b;
    CHECK_THROWS_AS(b.handle(1, publish("t", 1), Nanos{0}), BrokerError);
    b.handle(1, mqtt::Connect{"a", 60}, Nanos{0});
    CHECK_THROWS_AS(b.handle(1, mqtt::Connect{"a", 60}, Nanos{0}), BrokerError);
    CHECK_THROWS_AS(b.handle(1, mqtt::ConnAck{0}, Nanos{0}), BrokerError);
    CHECK_THROWS_AS(b.handle(1, mqtt::SubAck{1, {0}}, Nanos{0}), BrokerError);
}

TEST_CASE("publish is acked to the sender and routed to the subscriber")
{
    Broker b;
    setup(b);
    const auto a = b.handle(pub_conn, publish("dt/c1/data", 0, 1, 42), Nanos{0});
    REQUIRE(a.send.size() == 2);
    CHECK(a.send[0].connection == pub_conn);
    CHECK(std::get<mqtt::PubAck>(a.send[0].packet).packet_id == 42);
    const auto d = deliveries_to(a, sub_conn);
    REQUIRE(d.size() == 1);
    CHECK(d[0].qos == 1);
    CHECK(d[0].packet_id.has_value());
    CHECK(d[0].topic == "dt/c1/data");

    CHECK(deliveries_to(b.handle(pub_conn, publish("other/c1/data", 1), Nanos{0}), sub_conn).empty());
}

TEST_CASE("overlapping subscriptions deliver once at the highest granted qos")
{
    Broker b;
    b.handle(pub_conn, mqtt::Connect{"src", 60}, Nanos{0});
    b.handle(sub_conn, mqtt::Connect{"sub", 60}, Nanos{0});
    b.handle(sub_conn, mqtt::Subscribe{1, {{"dt/#", 0}, {"dt/+/data", 1}}}, Nanos{0});
    const auto d = deliveries_to(b.handle(pub_conn, publish("dt/c1/data", 0), Nanos{0}), sub_conn);
    REQUIRE(d.size() == 1);
    CHECK(d[0].qos == 1);
}

TEST_CASE("qos is downgraded to the granted level")
{
    Broker b;
    setup(b, 0);
    const auto d = deliveries_to(b.handle(pub_conn, publish("dt/c1/data", 0), Nanos{0}), sub_conn);
    REQUIRE(d.size() == 1);
    CHECK(d[0].qos == 0);
    CHECK_FALSE(d[0].packet_id);
}

TEST_CASE("inflight window holds back deliveries until acked")
{
    Broker b(BrokerConfig{3, std::nullopt, std::nullopt});
    setup(b);
    std::vector<Publish> got;
    for (int i = 0; i < 5; ++i) {
        const auto d = deliveries_to(b.handle(pub_conn, publish("dt/c1/data", i), Nanos{0}), sub_conn);
        got.insert(got.end(), d.begin(), d.end());
    }
    REQUIRE(got.size() == 3);
    CHECK(b.session("sub")->queue.size() == 2);

    const auto a = b.handle(sub_conn, mqtt::PubAck{*got[1].packet_id}, Nanos{0});
    const auto d = deliveries_to(a, sub_conn);
    REQUIRE(d.size() == 1);
    CHECK(d[0].payload == mqtt::Bytes{'3'});
    CHECK(b.session("sub")->inflight.size() == 3);
}

TEST_CASE("unknown puback is ignored and logged")
{
    Broker b;
    std::ostringstream log;
    b.set_debug_log(&log);
    setup(b);
    const auto a = b.handle(sub_conn, mqtt::PubAck{999}, Nanos{0});
    CHECK(a.send.empty());
    CHECK(b.stats().unknown_acks == 1);
    CHECK(log.str().find("unknown-puback sub 999") != std::string::npos);
}

TEST_CASE("debug stream records inbound publishes")
{
    Broker b;
    std::ostringstream log;
    b.set_debug_log(&log);
    setup(b);
    b.handle(pub_conn, publish("dt/c1/data", 17), Nanos{1234});
    CHECK(log.str() == "recv src 17 1234\n");
}

TEST_CASE("queue cap drops the newest message")
{
    Broker b(BrokerConfig{1, 2, std::nullopt});
    setup(b);
    for (int i = 0; i < 6; ++i) {
        b.handle(pub_conn, publish("dt/c1/data", i), Nanos{0});
    }
    const Session* s = b.session("sub");
    CHECK(s->inflight.size() == 1);
    REQUIRE(s->queue.size() == 2);
    CHECK(s->queue[0].payload == mqtt::Bytes{'1'});
    CHECK(s->queue[1].payload == mqtt::Bytes{'2'});
    CHECK(s->dropped == 3);
}

TEST_CASE("token bucket")
{
    TokenBucket tb(120.0, Nanos{0}); // 2 per second, capacity 2
    CHECK(tb.try_take(Nanos{0}));
    CHECK(tb.try_take(Nanos{0}));
    CHECK_FALSE(tb.try_take(Nanos{0}));
    const auto ready = tb.ready_at(Nanos{0});
    CHECK(ready > Nanos{499'999'999});
    CHECK(ready <= Nanos{500'000'001});
    CHECK(tb.try_take(ready));
    // refill is capped at capacity
    CHECK(tb.tokens(Nanos{3'600'000'000'000}) == doctest::Approx(2.0));

    TokenBucket slow(30.0, Nanos{0}); // capacity floors at one token
    CHECK(slow.try_take(Nanos{0}));
    CHECK_FALSE(slow.try_take(Nanos{1'000'000'000}));
    CHECK(slow.try_take(Nanos{2'000'000'000}));
}

TEST_CASE("rate limit spaces deliveries and next_wakeup drives on_timer")
{
    Broker b(BrokerConfig{20, std::nullopt, 60.0}); // 1 per second, burst 1
    setup(b);
    std::size_t delivered = 0;
    for (int i = 0; i < 3; ++i) {
        delivered += deliveries_to(b.handle(pub_conn, publish("dt/c1/data", i), Nanos{0}), sub_conn).size();
    }
    CHECK(delivered == 1);
    Nanos now{0};
    while (auto wake = b.next_wakeup(now)) {
        now = *wake;
        delivered += deliveries_to(b.on_timer(now), sub_conn).size();
    }
    CHECK(delivered == 3);
    CHECK(now >= Nanos{2'000'000'000});
    CHECK(now < Nanos{2'000'000'100});
}

TEST_CASE("qos 0 deliveries bypass window and limiter")
{
    Broker b(BrokerConfig{1, std::nullopt, 1.0});
    setup(b, 0);
    std::size_t delivered = 0;
    for (int i = 0; i < 10; ++i) {
        delivered += deliveries_to(b.handle(pub_conn, publish("dt/c1/data", i), Nanos{0}), sub_conn).size();
    }
    CHECK(delivered == 10);
}

TEST_CASE("config validation")
{
    CHECK_THROWS_AS(Broker(BrokerConfig{0, std::nullopt, std::nullopt}), std::invalid_argument);
    CHECK_THROWS_AS(Broker(BrokerConfig{20, std::nullopt, 0.5}), std::invalid_argument);
}

TEST_CASE("randomized publish/ack interleaving keeps window and FIFO invariants")
{
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t window = 1 + rng() % 8;
        Broker b(BrokerConfig{window, std::nullopt, std::nullopt});
        setup(b);
        const int total = 500;
        int published = 0;
        std::vector<std::uint64_t> order;
        std::vector<mqtt::PacketId> outstanding;
        Nanos now{0};
        while (published < total || !outstanding.empty()) {
            now += Nanos{1};
            Actions a;
            if (published < total && (outstanding.empty() || rng() % 2 == 0)) {
                a = b.handle(pub_conn, publish("dt/c1/data", static_cast<std::uint64_t>(published)), now);
                ++published;
            } else {
                const auto k = rng() % outstanding.size();
                a = b.handle(sub_conn, mqtt::PubAck{outstanding[k]}, now);
                outstanding.erase(outstanding.begin() + static_cast<std::ptrdiff_t>(k));
            }
            for (const auto& p : deliveries_to(a, sub_conn)) {
                REQUIRE(std::find(outstanding.begin(), outstanding.end(), *p.packet_id) == outstanding.end());
                outstanding.push_back(*p.packet_id);
                order.push_back(std::stoull(std::string(p.payload.begin(), p.payload.end())));
            }
            const Session* s = b.session("sub");
            REQUIRE(s->inflight.size() == outstanding.size());
            REQUIRE(s->inflight.size() <= window);
            if (!s->queue.empty()) {
                REQUIRE(s->inflight.size() == window);
            }
        }
        REQUIRE(order.size() == static_cast<std::size_t>(total));
        for (int i = 0; i < total; ++i) {
            REQUIRE(order[static_cast<std::size_t>(i)] == static_cast<std::uint64_t>(i));
        }
    }
}
