#pragma once

// TCP relay that holds every chunk it reads for a sampled egress delay before
// forwarding it. Departures within one direction never reorder:
//   departure = max(arrival + sample_delay, previous departure).
// Delay is applied per read() chunk rather than per IP packet.

#include "twinbench/netem.hpp"

#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>

#include <cstdint>
#include <memory>

namespace twinbench::netem {

struct ProxyConfig {
    boost::asio::ip::tcp::endpoint listen;
    boost::asio::ip::tcp::endpoint upstream;
    DelayConfig to_upstream;  // client -> upstream direction
    DelayConfig to_client;    // upstream -> client direction
    std::uint64_t seed = 0;
};

class DelayProxy {
public:
    /// Binds immediately (throws boost::system::system_error if the address is
    /// taken) and starts accepting once `io` runs.
    DelayProxy(boost::asio::io_context& io, ProxyConfig config);
    ~DelayProxy();

    DelayProxy(const DelayProxy&) = delete;
    DelayProxy& operator=(const DelayProxy&) = delete;

    boost::asio::ip::tcp::endpoint local_endpoint() const;

    /// Stops accepting and closes live connections. Safe from any thread.
    void stop();

    std::uint64_t connections_accepted() const;

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

} // namespace twinbench::netem
