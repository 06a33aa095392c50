// Standalone TCP delay proxy:
//   netem_proxy --listen 127.0.0.1:1884 --upstream 127.0.0.1:1883 --delay-ms 40 --jitter-ms 10 --seed 1

#include "twinbench/delay_proxy.hpp"

#include <CLI11.hpp>
#include <boost/asio/ip/address.hpp>
#include <boost/asio/signal_set.hpp>

#include <iostream>

namespace {

boost::asio::ip::tcp::endpoint parse_endpoint(const std::string& text)
{
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) {
        throw std::invalid_argument("expected addr:port, got '" + text + "'");
    }
    const auto port = std::stoul(text.substr(colon + 1));
    if (port > 65535) {
        throw std::invalid_argument("port out of range in '" + text + "'");
    }
    return {boost::asio::ip::make_address(text.substr(0, colon)), static_cast<unsigned short>(port)};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"TCP relay adding a sampled delay to every forwarded chunk"};
    std::string listen;
    std::string upstream;
    double delay_ms = 0.0;
    double jitter_ms = 0.0;
    std::uint64_t seed = 1;
    app.add_option("--listen", listen, "addr:port to accept on")->required();
    app.add_option("--upstream", upstream, "addr:port to forward to")->required();
    app.add_option("--delay-ms", delay_ms, "base delay per direction")->check(CLI::NonNegativeNumber);
    app.add_option("--jitter-ms", jitter_ms, "uniform variation around the base")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "RNG seed");
    CLI11_PARSE(app, argc, argv);

    try {
        twinbench::netem::DelayConfig delay{delay_ms, jitter_ms};
        delay.validate();
        boost::asio::io_context io;
        twinbench::netem::DelayProxy proxy(io, {parse_endpoint(listen), parse_endpoint(upstream), delay, delay, seed});
        boost::asio::signal_set signals(io, SIGINT, SIGTERM);
        signals.async_wait([&](const boost::system::error_code&, int) { proxy.stop(); io.stop(); });
        std::cout << "listening on " << proxy.local_endpoint() << std::endl;
        io.run();
    } catch (const std::exception& e) {
        std::cerr << "netem_proxy: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
