#include "twinbench/orchestrator.hpp"

#include "twinbench/delay_proxy.hpp"
#include "twinbench/record_io.hpp"
#include "twinbench/tcp_runtime.hpp"

#include <boost/asio/executor_work_guard.hpp>
#include <boost/asio/io_context.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <memory>
#include <thread>

namespace twinbench::orchestrator {

namespace asio = boost::asio;

namespace {

constexpr std::uint16_t broker_port = 1883;
constexpr std::uint16_t agent_port = 1;
constexpr std::uint16_t twin_port = 2;

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::map<std::string, std::uint64_t> expected_counts(const SituationPoint& point)
{
    std::map<std::string, std::uint64_t> expected;
    for (std::uint32_t i = 0; i < point.sources; ++i) {
        expected[source_id(i)] = point.messages_per_source;
    }
    return expected;
}

agents::SourceConfig source_config(const SituationPoint& point, std::uint32_t index, std::uint8_t qos)
{
    agents::SourceConfig cfg;
    cfg.client_id = source_id(index);
    cfg.message_count = point.messages_per_source;
    cfg.interval = std::chrono::milliseconds(point.interval_ms);
    cfg.payload_size = point.payload_bytes;
    cfg.qos = qos;
    return cfg;
}

std::vector<mqtt::SubscribeEntry> twin_subscriptions(std::uint8_t qos)
{
    return {{twin_filter, qos}};
}

ExperimentRecord blank_record(const ScenarioConfig& scenario, const SituationPoint& point, const RunOptions& options)
{
    ExperimentRecord record;
    record.scenario = scenario;
    record.point = point;
    record.mode = options.mode;
    record.seed = options.seed;
    record.broker = options.broker;
    record.qos = options.qos;
    record.timeout_factor = options.timeout_factor;
    record.created_at = utc_now();
    return record;
}

// ---------------------------------------------------------------- sim mode

class NetTransport final : public agents::Transport {
public:
    NetTransport(netem::VirtualNet& net, netem::Address self, netem::Address peer)
        : net_(net), self_(self), peer_(peer)
    {
    }
    void send(const mqtt::Packet& packet) override { net_.send(self_, peer_, mqtt::encode_packet(packet)); }

private:
    netem::VirtualNet& net_;
    netem::Address self_;
    netem::Address peer_;
};

class NetExecutor final : public agents::Executor {
public:
    explicit NetExecutor(netem::VirtualNet& net) : net_(net) {}
    Nanos now() const override { return net_.now(); }
    void at(Nanos when, std::function<void()> action) override { net_.schedule_at(when, std::move(action)); }

private:
    netem::VirtualNet& net_;
};

// Broker core attached to the virtual network, one connection per peer address.
class SimBroker {
public:
    SimBroker(netem::VirtualNet& net, netem::Address self, broker::BrokerConfig cfg)
        : net_(net), self_(self), core_(cfg)
    {
        net_.attach(self_, [this](const netem::Address& from, netem::VirtualNet::Message bytes) {
            receive(from, bytes);
        });
    }

    const broker::Broker& core() const { return core_; }

private:
    broker::ConnectionId connection_of(const netem::Address& peer)
    {
        auto [it, inserted] = connections_.try_emplace(peer, connections_.size() + 1);
        if (inserted) {
            peers_[it->second] = peer;
        }
        return it->second;
    }

    void receive(const netem::Address& from, const netem::VirtualNet::Message& bytes)
    {
        const auto conn = connection_of(from);
        auto& decoder = decoders_[conn];
        decoder.feed(bytes);
        while (auto packet = decoder.next()) {
            apply(core_.handle(conn, *packet, net_.now()));
        }
        arm();
    }

    void apply(const broker::Actions& actions)
    {
        for (const auto& out : actions.send) {
            net_.send(self_, peers_.at(out.connection), mqtt::encode_packet(out.packet));
        }
        for (auto conn : actions.close) {
            core_.connection_closed(conn);
        }
    }

    void arm()
    {
        const auto wake = core_.next_wakeup(net_.now());
        if (!wake || (armed_ && *armed_ <= *wake)) {
            return;
        }
        armed_ = wake;
        const std::uint64_t generation = ++generation_;
        net_.schedule_at(*wake, [this, generation] {
            if (generation != generation_) {
                return;
            }
            armed_.reset();
            apply(core_.on_timer(net_.now()));
            arm();
        });
    }

    netem::VirtualNet& net_;
    netem::Address self_;
    broker::Broker core_;
    std::map<netem::Address, broker::ConnectionId> connections_;
    std::map<broker::ConnectionId, netem::Address> peers_;
    std::map<broker::ConnectionId, mqtt::StreamDecoder> decoders_;
    std::optional<Nanos> armed_;
    std::uint64_t generation_ = 0;
};

template <class Agent>
void attach_agent(netem::VirtualNet& net, const netem::Address& self, Agent& agent,
                  std::shared_ptr<mqtt::StreamDecoder> decoder)
{
    net.attach(self, [&agent, decoder](const netem::Address&, netem::VirtualNet::Message bytes) {
        decoder->feed(bytes);
        while (auto packet = decoder->next()) {
            agent.on_packet(*packet);
        }
    });
}

ExperimentRecord run_sim(const ScenarioConfig& scenario, const SituationPoint& point, const RunOptions& options)
{
    netem::VirtualNet net(options.seed, {.max_events = 2'000'000'000, .record_trace = options.record_trace});
    for (const auto& [kind, delay] : scenario.egress_delays) {
        if (kind == NodeKind::client) {
            for (std::uint32_t i = 0; i < point.sources; ++i) {
                net.set_egress_delay({NodeKind::client, i}, delay);
            }
        } else {
            net.set_egress_delay({kind, 0}, delay);
        }
    }

    const netem::Address broker_addr{scenario.broker_node, broker_port};
    SimBroker broker(net, broker_addr, options.broker);
    NetExecutor executor(net);

    const netem::Address twin_addr{scenario.twin_node, twin_port};
    NetTransport twin_transport(net, twin_addr, broker_addr);
    agents::Twin twin(twin_id, twin_subscriptions(options.qos), twin_transport, executor);
    attach_agent(net, twin_addr, twin, std::make_shared<mqtt::StreamDecoder>());

    std::vector<std::unique_ptr<NetTransport>> transports;
    std::vector<std::unique_ptr<agents::Source>> sources;
    for (std::uint32_t i = 0; i < point.sources; ++i) {
        const netem::Address addr{{NodeKind::client, i}, agent_port};
        transports.push_back(std::make_unique<NetTransport>(net, addr, broker_addr));
        sources.push_back(std::make_unique<agents::Source>(source_config(point, i, options.qos), *transports.back(),
                                                           executor));
        attach_agent(net, addr, *sources.back(), std::make_shared<mqtt::StreamDecoder>());
    }

    // Handshakes complete before the first publish is scheduled.
    twin.connect();
    for (auto& s : sources) {
        s->connect();
    }
    net.run_until_idle();
    if (!twin.subscribed() ||
        !std::all_of(sources.begin(), sources.end(), [](const auto& s) { return s->connected(); })) {
        throw RunError(RunErrc::setup_failed, "twin subscription or source connect did not complete");
    }

    const Nanos epoch = net.now();
    twin.set_epoch(epoch);
    for (auto& s : sources) {
        s->start(epoch);
    }
    const Nanos deadline = epoch + Nanos{static_cast<std::int64_t>(
                                       static_cast<double>(nominal_duration(scenario, point, options).count()) *
                                       options.timeout_factor)};
    if (!net.run_until(deadline)) {
        throw RunError(RunErrc::timeout, "simulation still busy at the drain deadline");
    }

    ExperimentRecord record = blank_record(scenario, point, options);
    for (const auto& s : sources) {
        record.send.insert(record.send.end(), s->log().begin(), s->log().end());
    }
    std::stable_sort(record.send.begin(), record.send.end(), [](const auto& a, const auto& b) {
        return a.timestamp < b.timestamp;
    });
    record.recv = twin.log();
    record.integrity = twin.integrity(expected_counts(point));
    record.trace = net.trace();
    return record;
}

// ---------------------------------------------------------------- tcp mode

// io_context driven by its own thread until destroyed.
class Worker {
public:
    Worker() : guard_(asio::make_work_guard(io_)), thread_([this] { io_.run(); }) {}
    ~Worker()
    {
        guard_.reset();
        io_.stop();
        thread_.join();
    }
    asio::io_context& io() { return io_; }

private:
    asio::io_context io_;
    asio::executor_work_guard<asio::io_context::executor_type> guard_;
    std::thread thread_;
};

ExperimentRecord run_tcp(const ScenarioConfig& scenario, const SituationPoint& point, const RunOptions& options)
{
    const auto loopback = asio::ip::make_address("127.0.0.1");

    Worker broker_worker;
    Worker proxy_worker;
    std::unique_ptr<tcp::BrokerServer> server;
    try {
        server = std::make_unique<tcp::BrokerServer>(broker_worker.io(), options.broker,
                                                     tcp::endpoint(loopback, 0));
    } catch (const boost::system::system_error& e) {
        throw RunError(RunErrc::port_in_use, std::string("broker bind failed: ") + e.what());
    }

    const DelayConfig broker_egress = scenario.egress(scenario.broker_node.kind);
    std::vector<std::unique_ptr<netem::DelayProxy>> proxies;
    auto route = [&](NodeKind from, std::uint64_t salt) {
        netem::ProxyConfig cfg;
        cfg.listen = tcp::endpoint(loopback, 0);
        cfg.upstream = server->local_endpoint();
        cfg.to_upstream = scenario.egress(from);
        cfg.to_client = broker_egress;
        cfg.seed = netem::mix_seed(options.seed, salt);
        try {
            proxies.push_back(std::make_unique<netem::DelayProxy>(proxy_worker.io(), cfg));
        } catch (const boost::system::system_error& e) {
            throw RunError(RunErrc::port_in_use, std::string("proxy bind failed: ") + e.what());
        }
        return proxies.back()->local_endpoint();
    };
    const tcp::endpoint client_route = route(NodeKind::client, 1);
    const tcp::endpoint twin_route =
        scenario.twin_node == scenario.broker_node ? server->local_endpoint() : route(scenario.twin_node.kind, 2);

    // Agents run on this thread so their state needs no locking.
    asio::io_context io;
    tcp::SteadyExecutor executor(io);
    std::string failure;
    auto on_close = [&failure](const std::string& reason) {
        if (failure.empty()) {
            failure = reason;
        }
    };

    tcp::ClientConnection twin_conn(io, twin_route);
    agents::Twin twin(twin_id, twin_subscriptions(options.qos), twin_conn, executor);
    twin_conn.start([&twin](const mqtt::Packet& p) { twin.on_packet(p); }, on_close);

    std::vector<std::unique_ptr<tcp::ClientConnection>> conns;
    std::vector<std::unique_ptr<agents::Source>> sources;
    for (std::uint32_t i = 0; i < point.sources; ++i) {
        conns.push_back(std::make_unique<tcp::ClientConnection>(io, client_route));
        sources.push_back(
            std::make_unique<agents::Source>(source_config(point, i, options.qos), *conns.back(), executor));
        auto* source = sources.back().get();
        conns.back()->start([source](const mqtt::Packet& p) { source->on_packet(p); },
                            [source, &on_close](const std::string& reason) {
                                if (!source->finished()) {
                                    source->abort();
                                    on_close(reason);
                                }
                            });
    }

    auto wait_for = [&](auto&& done, Nanos limit, const char* what) {
        const auto deadline = std::chrono::steady_clock::now() + limit;
        while (!done()) {
            if (!failure.empty()) {
                throw RunError(RunErrc::setup_failed, std::string(what) + ": " + failure);
            }
            const auto now = std::chrono::steady_clock::now();
            if (now >= deadline) {
                throw RunError(RunErrc::timeout, std::string("timed out waiting for ") + what);
            }
            io.run_one_for(std::min<std::chrono::steady_clock::duration>(deadline - now,
                                                                          std::chrono::milliseconds(50)));
        }
    };

    twin.connect();
    wait_for([&] { return twin.subscribed(); }, std::chrono::seconds(10), "twin subscription");
    for (auto& s : sources) {
        s->connect();
    }
    wait_for([&] { return std::all_of(sources.begin(), sources.end(), [](const auto& s) { return s->connected(); }); },
             std::chrono::seconds(10), "source connections");

    const Nanos epoch = tcp::steady_now() + std::chrono::milliseconds(20);
    twin.set_epoch(epoch);
    for (auto& s : sources) {
        s->start(epoch);
    }
    const std::uint64_t total = point.messages_per_source * point.sources;
    const Nanos drain_limit{static_cast<std::int64_t>(
        static_cast<double>(nominal_duration(scenario, point, options).count()) * options.timeout_factor)};
    wait_for([&] { return twin.deliveries() >= total; }, drain_limit + std::chrono::seconds(5), "queue drain");

    ExperimentRecord record = blank_record(scenario, point, options);
    for (const auto& s : sources) {
        record.send.insert(record.send.end(), s->log().begin(), s->log().end());
    }
    std::stable_sort(record.send.begin(), record.send.end(), [](const auto& a, const auto& b) {
        return a.timestamp < b.timestamp;
    });
    record.recv = twin.log();
    record.integrity = twin.integrity(expected_counts(point));

    for (auto& c : conns) {
        c->send(mqtt::Disconnect{});
        c->close();
    }
    twin_conn.send(mqtt::Disconnect{});
    twin_conn.close();
    io.run_for(std::chrono::milliseconds(50));
    for (auto& p : proxies) {
        p->stop();
    }
    server->stop();
    return record;
}

std::string join_logs_text(const ExperimentRecord& r)
{
    return format_log_csv(r.send) + '\n' + format_log_csv(r.recv) + '\n' + format_integrity(r.integrity);
}

} // namespace

std::string to_string(Mode mode)
{
    return mode == Mode::sim ? "sim" : "tcp";
}

Mode parse_mode(const std::string& text)
{
    if (text == "sim") {
        return Mode::sim;
    }
    if (text == "tcp") {
        return Mode::tcp;
    }
    throw std::invalid_argument("mode must be sim or tcp, got '" + text + "'");
}

ScenarioConfig ScenarioConfig::preset(int id)
{
    const NodeId fog{NodeKind::fog, 0};
    const NodeId cloud{NodeKind::cloud, 0};
    switch (id) {
    case 1:
        return {1, cloud, cloud, {{NodeKind::client, {100, 10}}}};
    case 2:
        return {2, fog, cloud, {{NodeKind::client, {40, 10}}, {NodeKind::fog, {20, 5}}}};
    case 3:
        return {3, fog, fog, {{NodeKind::client, {40, 10}}, {NodeKind::fog, {20, 5}}}};
    default:
        throw std::invalid_argument("scenario must be 1, 2 or 3, got " + std::to_string(id));
    }
}

DelayConfig ScenarioConfig::egress(NodeKind kind) const
{
    auto it = egress_delays.find(kind);
    return it == egress_delays.end() ? DelayConfig{} : it->second;
}

ScenarioConfig ScenarioConfig::without_delays() const
{
    ScenarioConfig copy = *this;
    copy.egress_delays.clear();
    return copy;
}

std::string to_string(Situation s)
{
    switch (s) {
    case Situation::A:
        return "A";
    case Situation::B:
        return "B";
    case Situation::C:
        return "C";
    case Situation::custom:
        return "custom";
    }
    return "?";
}

Situation parse_situation(const std::string& text)
{
    if (text == "A" || text == "a") {
        return Situation::A;
    }
    if (text == "B" || text == "b") {
        return Situation::B;
    }
    if (text == "C" || text == "c") {
        return Situation::C;
    }
    if (text == "custom") {
        return Situation::custom;
    }
    throw std::invalid_argument("situation must be A, B, C or custom, got '" + text + "'");
}

std::string SituationPoint::name() const
{
    return "src" + std::to_string(sources) + "-msg" + std::to_string(messages_per_source) + "-int" +
           std::to_string(interval_ms) + "ms-pay" + std::to_string(payload_bytes);
}

std::vector<SituationPoint> sweep(Situation situation, Profile profile)
{
    std::vector<SituationPoint> points;
    switch (situation) {
    case Situation::A: {
        std::vector<std::uint64_t> counts{100, 1000, 10000};
        if (profile == Profile::full) {
            counts.push_back(100000);
        }
        for (auto count : counts) {
            for (std::uint32_t sources : {1u, 3u, 5u}) {
                points.push_back({Situation::A, sources, count, 10, 64});
            }
        }
        break;
    }
    case Situation::B:
        for (std::int64_t interval : {10, 20, 40, 80, 160, 320, 640, 1280, 2560}) {
            points.push_back({Situation::B, 1, 1000, interval, 64});
        }
        break;
    case Situation::C:
        for (std::size_t payload : {8, 16, 32, 64, 128, 256, 512}) {
            points.push_back({Situation::C, 1, 1000, 80, payload});
        }
        break;
    case Situation::custom:
        points.push_back({Situation::custom, 1, 1000, 80, 64});
        break;
    }
    return points;
}

std::vector<SituationPoint> apply_overrides(const std::vector<SituationPoint>& points, const PointOverrides& o)
{
    std::vector<SituationPoint> out;
    for (auto p : points) {
        p.sources = o.sources.value_or(p.sources);
        p.messages_per_source = o.messages.value_or(p.messages_per_source);
        p.interval_ms = o.interval_ms.value_or(p.interval_ms);
        p.payload_bytes = o.payload_bytes.value_or(p.payload_bytes);
        if (std::find(out.begin(), out.end(), p) == out.end()) {
            out.push_back(p);
        }
    }
    return out;
}

RunOptions ExperimentRecord::options() const
{
    RunOptions o;
    o.mode = mode;
    o.seed = seed;
    o.broker = broker;
    o.qos = qos;
    o.timeout_factor = timeout_factor;
    return o;
}

RunError::RunError(RunErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}

std::string source_id(std::uint32_t index)
{
    return "c" + std::to_string(index + 1);
}

Nanos nominal_duration(const ScenarioConfig& scenario, const SituationPoint& point, const RunOptions& options)
{
    double path_ms = 0.0;
    for (const auto& [kind, d] : scenario.egress_delays) {
        path_ms += d.base_ms + d.variation_ms;
    }
    const double rtt_ms = 2.0 * path_ms;
    const double total = static_cast<double>(point.messages_per_source) * point.sources;
    double ms = static_cast<double>(point.messages_per_source > 0 ? point.messages_per_source - 1 : 0) *
                    static_cast<double>(point.interval_ms) +
                rtt_ms + 1000.0;
    ms += total * rtt_ms / static_cast<double>(options.broker.max_inflight);
    if (options.broker.delivery_rate_limit) {
        ms += total * 60'000.0 / *options.broker.delivery_rate_limit;
    }
    return from_ms(ms);
}

ExperimentRecord run_experiment(const ScenarioConfig& scenario, const SituationPoint& point,
                                const RunOptions& options)
{
    options.broker.validate();
    if (point.sources == 0) {
        throw std::invalid_argument("at least one source is required");
    }
    for (const auto& [kind, d] : scenario.egress_delays) {
        d.validate();
    }
    return options.mode == Mode::sim ? run_sim(scenario, point, options) : run_tcp(scenario, point, options);
}

MatrixResult run_matrix(const std::vector<ScenarioConfig>& scenarios, const std::vector<SituationPoint>& points,
                        const RunOptions& options, std::uint32_t repeats)
{
    MatrixResult result;
    for (const auto& scenario : scenarios) {
        std::uint64_t index = 0;
        for (const auto& point : points) {
            for (std::uint32_t r = 0; r < repeats; ++r, ++index) {
                RunOptions o = options;
                o.seed = options.seed + index;
                try {
                    auto record = run_experiment(scenario, point, o);
                    record.repeat = r;
                    result.records.push_back(std::move(record));
                } catch (const std::exception& e) {
                    result.failures.push_back({scenario.id, point, r, e.what()});
                }
            }
        }
    }
    return result;
}

ExperimentRecord replay(const ExperimentRecord& record)
{
    if (record.mode != Mode::sim) {
        throw RunError(RunErrc::unsupported, "only sim-mode records can be replayed");
    }
    ExperimentRecord again = run_experiment(record.scenario, record.point, record.options());
    again.repeat = record.repeat;
    if (join_logs_text(again) != join_logs_text(record)) {
        throw RunError(RunErrc::replay_mismatch, "replayed logs differ from the stored record");
    }
    return again;
}

} // namespace twinbench::orchestrator
