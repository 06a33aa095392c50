#pragma once

// Real-socket plumbing for tcp mode: the broker server, an MQTT client
// connection usable as an agents::Transport, and a steady-clock executor.
// Each object lives on one io_context and is not thread-safe on its own;
// run each io_context from a single thread.

#include "twinbench/agents.hpp"
#include "twinbench/broker.hpp"

#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>

#include <functional>
#include <memory>
#include <ostream>

namespace twinbench::tcp {

using endpoint = boost::asio::ip::tcp::endpoint;

Nanos steady_now();

class BrokerServer {
public:
    /// Binds `listen` right away; throws boost::system::system_error when the
    /// port is taken.
    BrokerServer(boost::asio::io_context& io, broker::BrokerConfig config, endpoint listen,
                 std::ostream* debug_log = nullptr);
    ~BrokerServer();

    BrokerServer(const BrokerServer&) = delete;
    BrokerServer& operator=(const BrokerServer&) = delete;

    endpoint local_endpoint() const;
    void stop();

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

class SteadyExecutor final : public agents::Executor {
public:
    explicit SteadyExecutor(boost::asio::io_context& io) : io_(io) {}
    Nanos now() const override { return steady_now(); }
    void at(Nanos when, std::function<void()> action) override;

private:
    boost::asio::io_context& io_;
};

/// Client side of one MQTT connection. Packets sent before the TCP connect
/// completes are queued.
class ClientConnection final : public agents::Transport {
public:
    using PacketHandler = std::function<void(const mqtt::Packet&)>;
    using CloseHandler = std::function<void(const std::string& reason)>;

    ClientConnection(boost::asio::io_context& io, endpoint remote);
    ~ClientConnection() override;

    void start(PacketHandler on_packet, CloseHandler on_close);
    void send(const mqtt::Packet& packet) override;
    void close();

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

} // namespace twinbench::tcp
