#include "twinbench/delay_proxy.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/write.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <deque>
#include <mutex>
#include <vector>

namespace twinbench::netem {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

class Connection;

// One direction of a proxied connection.
class Pipe : public std::enable_shared_from_this<Pipe> {
public:
    Pipe(std::shared_ptr<tcp::socket> from, std::shared_ptr<tcp::socket> to, DelayConfig cfg,
         std::uint64_t seed, std::function<void(bool clean)> on_done)
        : from_(std::move(from)), to_(std::move(to)), cfg_(cfg), rng_(seed),
          timer_(from_->get_executor()), on_done_(std::move(on_done))
    {
    }

    void start() { read(); }

    void cancel() { timer_.cancel(); }

private:
    struct Chunk {
        Clock::time_point departure;
        std::vector<std::uint8_t> bytes;
        bool eof = false;
    };

    void read()
    {
        from_->async_read_some(asio::buffer(buffer_), [self = shared_from_this()](auto ec, std::size_t n) {
            const auto arrival = Clock::now();
            if (ec) {
                self->enqueue({std::max(arrival, self->last_departure_), {}, true});
                return;
            }
            const auto delay = std::chrono::duration_cast<Clock::duration>(
                std::chrono::duration<double, std::milli>(sample_delay(self->cfg_, self->rng_)));
            Chunk chunk{std::max(arrival + delay, self->last_departure_),
                        std::vector<std::uint8_t>(self->buffer_.begin(), self->buffer_.begin() + n)};
            self->enqueue(std::move(chunk));
            self->read();
        });
    }

    void enqueue(Chunk chunk)
    {
        last_departure_ = chunk.departure;
        queue_.push_back(std::move(chunk));
        if (!busy_) {
            next();
        }
    }

    void next()
    {
        if (queue_.empty()) {
            busy_ = false;
            return;
        }
        busy_ = true;
        timer_.expires_at(queue_.front().departure);
        timer_.async_wait([self = shared_from_this()](auto ec) {
            if (ec) {
                self->on_done_(false);
                return;
            }
            if (self->queue_.front().eof) {
                boost::system::error_code ignored;
                self->to_->shutdown(tcp::socket::shutdown_send, ignored);
                self->on_done_(true);
                return;
            }
            asio::async_write(*self->to_, asio::buffer(self->queue_.front().bytes),
                              [self](auto wec, std::size_t) {
                                  if (wec) {
                                      self->on_done_(false);
                                      return;
                                  }
                                  self->queue_.pop_front();
                                  self->next();
                              });
        });
    }

    std::shared_ptr<tcp::socket> from_;
    std::shared_ptr<tcp::socket> to_;
    DelayConfig cfg_;
    Rng rng_;
    asio::steady_timer timer_;
    std::function<void(bool)> on_done_;
    std::array<std::uint8_t, 16384> buffer_{};
    std::deque<Chunk> queue_;
    Clock::time_point last_departure_{};
    bool busy_ = false;
};

class Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(tcp::socket client, const ProxyConfig& cfg, std::uint64_t index)
        : client_(std::make_shared<tcp::socket>(std::move(client))),
          upstream_(std::make_shared<tcp::socket>(client_->get_executor())), cfg_(cfg), index_(index)
    {
    }

    void start()
    {
        upstream_->async_connect(cfg_.upstream, [self = shared_from_this()](auto ec) {
            if (ec) {
                self->close();
                return;
            }
            boost::system::error_code ignored;
            self->upstream_->set_option(tcp::no_delay(true), ignored);
            self->client_->set_option(tcp::no_delay(true), ignored);
            std::weak_ptr<Connection> weak = self;
            auto done = [weak](bool clean) {
                if (auto c = weak.lock()) {
                    c->finished(clean);
                }
            };
            self->up_ = std::make_shared<Pipe>(self->client_, self->upstream_, self->cfg_.to_upstream,
                                               mix_seed(self->cfg_.seed, 2 * self->index_), done);
            self->down_ = std::make_shared<Pipe>(self->upstream_, self->client_, self->cfg_.to_client,
                                                 mix_seed(self->cfg_.seed, 2 * self->index_ + 1), done);
            self->up_->start();
            self->down_->start();
        });
    }

    void close()
    {
        boost::system::error_code ignored;
        client_->close(ignored);
        upstream_->close(ignored);
        if (up_) {
            up_->cancel();
        }
        if (down_) {
            down_->cancel();
        }
    }

private:
    void finished(bool clean)
    {
        if (!clean || ++finished_ == 2) {
            close();
        }
    }

    std::shared_ptr<tcp::socket> client_;
    std::shared_ptr<tcp::socket> upstream_;
    ProxyConfig cfg_;
    std::uint64_t index_;
    std::shared_ptr<Pipe> up_;
    std::shared_ptr<Pipe> down_;
    int finished_ = 0;
};

} // namespace

struct DelayProxy::Impl : std::enable_shared_from_this<DelayProxy::Impl> {
    Impl(asio::io_context& io, ProxyConfig cfg) : io(io), config(std::move(cfg)), acceptor(io)
    {
        config.to_upstream.validate();
        config.to_client.validate();
        acceptor.open(config.listen.protocol());
        acceptor.set_option(tcp::acceptor::reuse_address(true));
        acceptor.bind(config.listen);
        acceptor.listen();
        local = acceptor.local_endpoint();
    }

    void accept()
    {
        acceptor.async_accept([self = shared_from_this()](auto ec, tcp::socket socket) {
            if (ec) {
                return;
            }
            auto conn = std::make_shared<Connection>(std::move(socket), self->config, self->accepted++);
            self->live.push_back(conn);
            conn->start();
            self->accept();
        });
    }

    void shutdown()
    {
        boost::system::error_code ignored;
        acceptor.close(ignored);
        for (auto& weak : live) {
            if (auto c = weak.lock()) {
                c->close();
            }
        }
        live.clear();
    }

    asio::io_context& io;
    ProxyConfig config;
    tcp::acceptor acceptor;
    tcp::endpoint local;
    std::atomic<std::uint64_t> accepted{0};
    std::vector<std::weak_ptr<Connection>> live;
};

DelayProxy::DelayProxy(asio::io_context& io, ProxyConfig config)
    : impl_(std::make_shared<Impl>(io, std::move(config)))
{
    impl_->accept();
}

DelayProxy::~DelayProxy()
{
    stop();
}

tcp::endpoint DelayProxy::local_endpoint() const
{
    return impl_->local;
}

void DelayProxy::stop()
{
    asio::post(impl_->io, [impl = impl_] { impl->shutdown(); });
}

std::uint64_t DelayProxy::connections_accepted() const
{
    return impl_->accepted.load();
}

} // namespace twinbench::netem
