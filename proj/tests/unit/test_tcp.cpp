#include "twinbench/delay_proxy.hpp"
#include "twinbench/tcp_runtime.hpp"

#include <doctest.h>

#include <boost/asio/ip/address.hpp>

#include <chrono>

using namespace twinbench;
namespace asio = boost::asio;

namespace {

const tcp::endpoint any_loopback{asio::ip::make_address("127.0.0.1"), 0};

// Runs `io` until `done` holds or the wall-clock budget runs out.
template <class Pred>
bool run_until(asio::io_context& io, Pred done, std::chrono::milliseconds budget = std::chrono::seconds(10))
{
    const auto stop = std::chrono::steady_clock::now() + budget;
    while (!done() && std::chrono::steady_clock::now() < stop) {
        io.run_one_for(std::chrono::milliseconds(20));
    }
    return done();
}

} // namespace

TEST_CASE("broker server routes a publish between two clients")
{
    asio::io_context io;
    tcp::BrokerServer server(io, {}, any_loopback);

    std::vector<mqtt::Packet> sub_rx;
    std::vector<mqtt::Packet> pub_rx;
    tcp::ClientConnection sub(io, server.local_endpoint());
    tcp::ClientConnection pub(io, server.local_endpoint());
    sub.start([&](const mqtt::Packet& p) { sub_rx.push_back(p); }, [](const std::string&) {});
    pub.start([&](const mqtt::Packet& p) { pub_rx.push_back(p); }, [](const std::string&) {});

    sub.send(mqtt::Connect{"twin", 60});
    sub.send(mqtt::Subscribe{1, {{"dt/+/data", 1}}});
    REQUIRE(run_until(io, [&] { return sub_rx.size() == 2; }));
    CHECK(std::get<mqtt::SubAck>(sub_rx[1]).granted == std::vector<std::uint8_t>{1});

    pub.send(mqtt::Connect{"c1", 60});
    pub.send(mqtt::Publish{"dt/c1/data", {'4', '2'}, 1, 9, false, false});
    REQUIRE(run_until(io, [&] { return pub_rx.size() == 2 && sub_rx.size() == 3; }));
    CHECK(std::get<mqtt::PubAck>(pub_rx[1]).packet_id == 9);
    const auto& delivered = std::get<mqtt::Publish>(sub_rx[2]);
    CHECK(delivered.payload == mqtt::Bytes{'4', '2'});
    CHECK(delivered.qos == 1);

    pub.close();
    sub.close();
    server.stop();
}

TEST_CASE("broker server drops a client that breaks the protocol")
{
    asio::io_context io;
    tcp::BrokerServer server(io, {}, any_loopback);
    bool closed = false;
    tcp::ClientConnection c(io, server.local_endpoint());
    c.start([](const mqtt::Packet&) {}, [&](const std::string&) { closed = true; });
    c.send(mqtt::PingReq{}); // before CONNECT
    CHECK(run_until(io, [&] { return closed; }));
    server.stop();
}

TEST_CASE("delay proxy adds its delay in both directions")
{
    asio::io_context io;
    tcp::BrokerServer server(io, {}, any_loopback);
    netem::DelayProxy proxy(io, {any_loopback, server.local_endpoint(), {60, 0}, {30, 0}, 1});

    std::vector<mqtt::Packet> rx;
    tcp::ClientConnection c(io, proxy.local_endpoint());
    c.start([&](const mqtt::Packet& p) { rx.push_back(p); }, [](const std::string&) {});
    // Let the connection settle so connect latency is not measured.
    c.send(mqtt::Connect{"dev", 60});
    REQUIRE(run_until(io, [&] { return rx.size() == 1; }));

    const auto t0 = std::chrono::steady_clock::now();
    c.send(mqtt::PingReq{});
    REQUIRE(run_until(io, [&] { return rx.size() == 2; }));
    const auto rtt = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    CHECK(std::holds_alternative<mqtt::PingResp>(rx[1]));
    CHECK(rtt >= 89.0);
    CHECK(rtt < 250.0);
    CHECK(proxy.connections_accepted() == 1);

    c.close();
    proxy.stop();
    server.stop();
}

TEST_CASE("delay proxy keeps order under jitter")
{
    asio::io_context io;
    tcp::BrokerServer server(io, {}, any_loopback);
    netem::DelayProxy proxy(io, {any_loopback, server.local_endpoint(), {20, 15}, {0, 0}, 7});

    std::vector<mqtt::Packet> sub_rx;
    tcp::ClientConnection sub(io, server.local_endpoint());
    sub.start([&](const mqtt::Packet& p) { sub_rx.push_back(p); }, [](const std::string&) {});
    sub.send(mqtt::Connect{"twin", 60});
    sub.send(mqtt::Subscribe{1, {{"#", 0}}});
    REQUIRE(run_until(io, [&] { return sub_rx.size() == 2; }));

    tcp::ClientConnection pub(io, proxy.local_endpoint());
    pub.start([](const mqtt::Packet&) {}, [](const std::string&) {});
    pub.send(mqtt::Connect{"c1", 60});
    for (int i = 0; i < 50; ++i) {
        const auto digits = std::to_string(i);
        pub.send(mqtt::Publish{"t", mqtt::Bytes(digits.begin(), digits.end()), 0, std::nullopt, false, false});
        io.run_for(std::chrono::milliseconds(2));
    }
    REQUIRE(run_until(io, [&] { return sub_rx.size() == 52; }));
    for (int i = 0; i < 50; ++i) {
        const auto& p = std::get<mqtt::Publish>(sub_rx[static_cast<std::size_t>(i) + 2]);
        CHECK(std::string(p.payload.begin(), p.payload.end()) == std::to_string(i));
    }
    pub.close();
    sub.close();
    proxy.stop();
    server.stop();
}

TEST_CASE("proxy closes the client when the upstream refuses")
{
    asio::io_context io;
    tcp::endpoint dead;
    {
        // Grab a free port, then release it so nothing listens there.
        asio::ip::tcp::acceptor probe(io, any_loopback);
        dead = probe.local_endpoint();
    }
    netem::DelayProxy proxy(io, {any_loopback, dead, {0, 0}, {0, 0}, 1});
    bool closed = false;
    tcp::ClientConnection c(io, proxy.local_endpoint());
    c.start([](const mqtt::Packet&) {}, [&](const std::string&) { closed = true; });
    c.send(mqtt::Connect{"x", 60});
    CHECK(run_until(io, [&] { return closed; }));
    proxy.stop();
}

TEST_CASE("binding a taken port throws")
{
    asio::io_context io;
    tcp::BrokerServer server(io, {}, any_loopback);
    CHECK_THROWS_AS(tcp::BrokerServer(io, {}, server.local_endpoint()), boost::system::system_error);
    server.stop();
}
