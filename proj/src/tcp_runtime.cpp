#include "twinbench/tcp_runtime.hpp"

#include <boost/asio/post.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/write.hpp>

#include <array>
#include <deque>
#include <iostream>
#include <map>

namespace twinbench::tcp {

namespace asio = boost::asio;
using asio::ip::tcp;

Nanos steady_now()
{
    return std::chrono::duration_cast<Nanos>(std::chrono::steady_clock::now().time_since_epoch());
}

namespace {

std::chrono::steady_clock::time_point to_time_point(Nanos t)
{
    return std::chrono::steady_clock::time_point(
        std::chrono::duration_cast<std::chrono::steady_clock::duration>(t));
}

// Socket plus ordered write queue and incremental decoder.
class Link : public std::enable_shared_from_this<Link> {
public:
    using PacketHandler = std::function<void(const mqtt::Packet&)>;
    using CloseHandler = std::function<void(const std::string&)>;

    explicit Link(tcp::socket socket) : socket_(std::move(socket)) {}

    tcp::socket& socket() { return socket_; }

    void start(PacketHandler on_packet, CloseHandler on_close)
    {
        on_packet_ = std::move(on_packet);
        on_close_ = std::move(on_close);
        boost::system::error_code ignored;
        socket_.set_option(tcp::no_delay(true), ignored);
        started_ = true;
        read();
        flush();
    }

    void send(mqtt::Bytes bytes)
    {
        if (closed_) {
            return;
        }
        writes_.push_back(std::move(bytes));
        if (started_ && !writing_) {
            flush();
        }
    }

    void close_after_flush()
    {
        closing_ = true;
        if (!writing_ && writes_.empty()) {
            shutdown("closed by peer logic");
        }
    }

    void shutdown(const std::string& reason)
    {
        if (closed_) {
            return;
        }
        closed_ = true;
        boost::system::error_code ignored;
        socket_.shutdown(tcp::socket::shutdown_both, ignored);
        socket_.close(ignored);
        if (on_close_) {
            auto handler = std::move(on_close_);
            on_close_ = nullptr;
            handler(reason);
        }
    }

    bool closed() const { return closed_; }

private:
    void read()
    {
        socket_.async_read_some(asio::buffer(buffer_), [self = shared_from_this()](auto ec, std::size_t n) {
            if (ec) {
                self->shutdown(ec == asio::error::eof ? "connection closed" : ec.message());
                return;
            }
            self->decoder_.feed(std::span(self->buffer_.data(), n));
            try {
                while (auto packet = self->decoder_.next()) {
                    if (self->closed_) {
                        return;
                    }
                    self->on_packet_(*packet);
                }
            } catch (const std::exception& e) {
                self->shutdown(e.what());
                return;
            }
            if (!self->closed_) {
                self->read();
            }
        });
    }

    void flush()
    {
        if (writes_.empty() || closed_) {
            writing_ = false;
            if (closing_) {
                shutdown("closed after flush");
            }
            return;
        }
        writing_ = true;
        asio::async_write(socket_, asio::buffer(writes_.front()), [self = shared_from_this()](auto ec, std::size_t) {
            if (ec) {
                self->shutdown(ec.message());
                return;
            }
            self->writes_.pop_front();
            self->flush();
        });
    }

    tcp::socket socket_;
    mqtt::StreamDecoder decoder_;
    std::array<std::uint8_t, 16384> buffer_{};
    std::deque<mqtt::Bytes> writes_;
    PacketHandler on_packet_;
    CloseHandler on_close_;
    bool started_ = false;
    bool writing_ = false;
    bool closing_ = false;
    bool closed_ = false;
};

} // namespace

struct BrokerServer::Impl : std::enable_shared_from_this<BrokerServer::Impl> {
    Impl(asio::io_context& io, broker::BrokerConfig config, endpoint listen, std::ostream* debug)
        : io(io), core(config), acceptor(io), timer(io)
    {
        core.set_debug_log(debug);
        acceptor.open(listen.protocol());
        acceptor.set_option(tcp::acceptor::reuse_address(true));
        acceptor.bind(listen);
        acceptor.listen();
        local = acceptor.local_endpoint();
    }

    void accept()
    {
        acceptor.async_accept([self = shared_from_this()](auto ec, tcp::socket socket) {
            if (ec) {
                return;
            }
            const broker::ConnectionId id = self->next_id++;
            auto link = std::make_shared<Link>(std::move(socket));
            self->links[id] = link;
            std::weak_ptr<Impl> weak = self;
            link->start(
                [weak, id](const mqtt::Packet& packet) {
                    if (auto s = weak.lock()) {
                        s->on_packet(id, packet);
                    }
                },
                [weak, id](const std::string&) {
                    if (auto s = weak.lock()) {
                        s->core.connection_closed(id);
                        s->links.erase(id);
                    }
                });
            self->accept();
        });
    }

    void on_packet(broker::ConnectionId id, const mqtt::Packet& packet)
    {
        try {
            apply(core.handle(id, packet, steady_now()));
        } catch (const broker::BrokerError& e) {
            if (auto it = links.find(id); it != links.end()) {
                auto link = it->second;
                link->shutdown(e.what());
            }
        }
        arm_timer();
    }

    void apply(const broker::Actions& actions)
    {
        for (const auto& out : actions.send) {
            if (auto it = links.find(out.connection); it != links.end()) {
                it->second->send(mqtt::encode_packet(out.packet));
            }
        }
        for (auto id : actions.close) {
            if (auto it = links.find(id); it != links.end()) {
                auto link = it->second;
                link->close_after_flush();
            }
        }
    }

    void arm_timer()
    {
        const auto wake = core.next_wakeup(steady_now());
        if (!wake) {
            return;
        }
        if (armed && *armed <= *wake) {
            return;
        }
        armed = wake;
        timer.expires_at(to_time_point(*wake));
        timer.async_wait([weak = std::weak_ptr<Impl>(shared_from_this())](auto ec) {
            auto self = weak.lock();
            if (!self || ec) {
                return;
            }
            self->armed.reset();
            self->apply(self->core.on_timer(steady_now()));
            self->arm_timer();
        });
    }

    void shutdown()
    {
        boost::system::error_code ignored;
        acceptor.close(ignored);
        timer.cancel();
        auto live = links;
        for (auto& [id, link] : live) {
            link->shutdown("server stopping");
        }
        links.clear();
    }

    asio::io_context& io;
    broker::Broker core;
    tcp::acceptor acceptor;
    asio::steady_timer timer;
    std::optional<Nanos> armed;
    endpoint local;
    broker::ConnectionId next_id = 1;
    std::map<broker::ConnectionId, std::shared_ptr<Link>> links;
};

BrokerServer::BrokerServer(asio::io_context& io, broker::BrokerConfig config, endpoint listen,
                           std::ostream* debug_log)
    : impl_(std::make_shared<Impl>(io, config, listen, debug_log))
{
    impl_->accept();
}

BrokerServer::~BrokerServer()
{
    stop();
}

endpoint BrokerServer::local_endpoint() const
{
    return impl_->local;
}

void BrokerServer::stop()
{
    asio::post(impl_->io, [impl = impl_] { impl->shutdown(); });
}

void SteadyExecutor::at(Nanos when, std::function<void()> action)
{
    auto timer = std::make_shared<asio::steady_timer>(io_, to_time_point(when));
    timer->async_wait([timer, action = std::move(action)](auto ec) {
        if (!ec) {
            action();
        }
    });
}

struct ClientConnection::Impl {
    Impl(asio::io_context& io, endpoint remote) : remote(remote), link(std::make_shared<Link>(tcp::socket(io))) {}

    endpoint remote;
    std::shared_ptr<Link> link;
};

ClientConnection::ClientConnection(asio::io_context& io, endpoint remote)
    : impl_(std::make_shared<Impl>(io, remote))
{
}

ClientConnection::~ClientConnection() = default;

void ClientConnection::start(PacketHandler on_packet, CloseHandler on_close)
{
    auto link = impl_->link;
    link->socket().async_connect(impl_->remote, [link, on_packet = std::move(on_packet),
                                                 on_close = std::move(on_close)](auto ec) mutable {
        if (ec) {
            on_close("connect failed: " + ec.message());
            return;
        }
        link->start(std::move(on_packet), std::move(on_close));
    });
}

void ClientConnection::send(const mqtt::Packet& packet)
{
    impl_->link->send(mqtt::encode_packet(packet));
}

void ClientConnection::close()
{
    impl_->link->close_after_flush();
}

} // namespace twinbench::tcp
