// twinbench: run the placement experiments, replay sim records, and report.

#include "twinbench/analysis.hpp"
#include "twinbench/orchestrator.hpp"
#include "twinbench/record_io.hpp"
#include "twinbench/tcp_runtime.hpp"

#include <CLI11.hpp>
#include <boost/asio/ip/address.hpp>
#include <boost/asio/signal_set.hpp>

#include <iostream>

namespace orch = twinbench::orchestrator;
namespace analysis = twinbench::analysis;
namespace fs = std::filesystem;

namespace {

struct RunArgs {
    std::string scenario = "all";
    std::string situation;
    std::optional<std::uint32_t> sources;
    std::optional<std::uint64_t> messages;
    std::optional<std::int64_t> interval_ms;
    std::optional<std::size_t> payload_bytes;
    std::string mode = "sim";
    std::uint64_t seed = 1;
    std::size_t max_inflight = 20;
    std::optional<double> rate_limit;
    std::optional<std::size_t> queue_cap;
    int qos = 1;
    std::uint32_t repeats = 1;
    double timeout_factor = 10.0;
    bool full = false;
    std::string out;
};

std::vector<orch::SituationPoint> points_for(const RunArgs& a)
{
    const auto situation = orch::parse_situation(a.situation);
    const orch::PointOverrides overrides{a.sources, a.messages, a.interval_ms, a.payload_bytes};
    if (situation == orch::Situation::custom) {
        if (!a.messages || !a.interval_ms) {
            throw std::invalid_argument("situation custom needs --messages and --interval-ms");
        }
        orch::SituationPoint p;
        p.situation = situation;
        return orch::apply_overrides({p}, overrides);
    }
    return orch::apply_overrides(orch::sweep(situation, a.full ? orch::Profile::full : orch::Profile::ci), overrides);
}

int cmd_run(const RunArgs& a)
{
    std::vector<orch::ScenarioConfig> scenarios;
    if (a.scenario == "all") {
        for (int id : {1, 2, 3}) {
            scenarios.push_back(orch::ScenarioConfig::preset(id));
        }
    } else {
        scenarios.push_back(orch::ScenarioConfig::preset(std::stoi(a.scenario)));
    }
    orch::RunOptions options;
    options.mode = orch::parse_mode(a.mode);
    options.seed = a.seed;
    options.qos = static_cast<std::uint8_t>(a.qos);
    options.timeout_factor = a.timeout_factor;
    options.broker.max_inflight = a.max_inflight;
    options.broker.delivery_rate_limit = a.rate_limit;
    options.broker.queue_cap = a.queue_cap;
    options.broker.validate();

    const auto result = orch::run_matrix(scenarios, points_for(a), options, a.repeats);
    for (const auto& rec : result.records) {
        const auto dir = fs::path(a.out) / orch::record_path(rec);
        orch::save_record(rec, dir);
        std::cout << dir.generic_string() << ": sent " << rec.send.size() << ", received " << rec.integrity.received
                  << ", gaps " << rec.integrity.gaps.size() << ", duplicates " << rec.integrity.duplicates << '\n';
    }
    for (const auto& f : result.failures) {
        std::cerr << "scenario " << f.scenario << ' ' << f.point.name() << " repeat " << f.repeat << ": " << f.error
                  << '\n';
    }
    if (!result.failures.empty()) {
        std::cerr << "twinbench run: " << result.failures.size() << " of "
                  << result.failures.size() + result.records.size() << " runs failed\n";
        return 1;
    }
    return 0;
}

int cmd_replay(const std::string& dir)
{
    const auto stored = orch::load_record(dir);
    const auto again = orch::replay(stored);
    std::cout << "replay identical: " << again.send.size() << " sends, " << again.recv.size() << " receives\n";
    return 0;
}

int cmd_report(const std::string& dir, const analysis::ReportOptions& opts, const std::string& summary_file)
{
    if (!summary_file.empty()) {
        analysis::report_summary_file(summary_file, std::cout);
        return 0;
    }
    if (analysis::report_directory(dir, opts, std::cout) == 0) {
        throw std::runtime_error("no records under " + dir);
    }
    return 0;
}

int cmd_broker(const std::string& listen, std::uint16_t port, const RunArgs& a)
{
    twinbench::broker::BrokerConfig config;
    config.max_inflight = a.max_inflight;
    config.delivery_rate_limit = a.rate_limit;
    config.queue_cap = a.queue_cap;
    config.validate();
    boost::asio::io_context io;
    twinbench::tcp::BrokerServer server(io, config, {boost::asio::ip::make_address(listen), port});
    boost::asio::signal_set signals(io, SIGINT, SIGTERM);
    signals.async_wait([&](const boost::system::error_code&, int) { server.stop(); io.stop(); });
    std::cout << "broker listening on " << server.local_endpoint() << std::endl;
    io.run();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Edge/fog/cloud digital twin latency testbed"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "run experiments and write records");
    run_cmd->add_option("--scenario", run.scenario, "1, 2, 3 or all")
        ->check(CLI::IsMember({"1", "2", "3", "all"}));
    run_cmd->add_option("--situation", run.situation, "A, B, C or custom")
        ->required()
        ->check(CLI::IsMember({"A", "B", "C", "custom"}));
    run_cmd->add_option("--sources", run.sources)->check(CLI::Range(1u, 1000u));
    run_cmd->add_option("--messages", run.messages)->check(CLI::PositiveNumber);
    run_cmd->add_option("--interval-ms", run.interval_ms)->check(CLI::NonNegativeNumber);
    run_cmd->add_option("--payload-bytes", run.payload_bytes);
    run_cmd->add_option("--mode", run.mode)->check(CLI::IsMember({"sim", "tcp"}));
    run_cmd->add_option("--seed", run.seed);
    run_cmd->add_option("--max-inflight", run.max_inflight);
    run_cmd->add_option("--rate-limit-per-min", run.rate_limit);
    run_cmd->add_option("--queue-cap", run.queue_cap);
    run_cmd->add_option("--qos", run.qos)->check(CLI::Range(0, 1));
    run_cmd->add_option("--repeats", run.repeats)->check(CLI::Range(1u, 1000u));
    run_cmd->add_option("--timeout-factor", run.timeout_factor)->check(CLI::PositiveNumber);
    run_cmd->add_flag("--full", run.full, "include the 100000-message points of situation A");
    run_cmd->add_option("--out", run.out, "output directory")->required();

    std::string replay_dir;
    auto* replay_cmd = app.add_subcommand("replay", "re-run a sim record and compare its logs");
    replay_cmd->add_option("record", replay_dir)->required();

    std::string report_dir;
    std::string summary_file;
    analysis::ReportOptions report_opts;
    auto* report_cmd = app.add_subcommand("report", "latency tables and CSVs for a results directory");
    report_cmd->add_option("dir", report_dir);
    report_cmd->add_option("--deadline-ms", report_opts.deadline_ms)->check(CLI::PositiveNumber);
    report_cmd->add_option("--bin-ms", report_opts.bin_ms)->check(CLI::PositiveNumber);
    report_cmd->add_option("--summary", summary_file, "compare straight from a summary.csv");

    std::string broker_listen = "127.0.0.1";
    std::uint16_t broker_port = 1883;
    auto* broker_cmd = app.add_subcommand("broker", "serve the MQTT broker over TCP");
    broker_cmd->add_option("--listen", broker_listen);
    broker_cmd->add_option("--port", broker_port);
    broker_cmd->add_option("--max-inflight", run.max_inflight);
    broker_cmd->add_option("--rate-limit-per-min", run.rate_limit);
    broker_cmd->add_option("--queue-cap", run.queue_cap);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            return cmd_run(run);
        }
        if (replay_cmd->parsed()) {
            return cmd_replay(replay_dir);
        }
        if (report_cmd->parsed()) {
            if (report_dir.empty() && summary_file.empty()) {
                throw std::invalid_argument("report needs a directory or --summary");
            }
            return cmd_report(report_dir, report_opts, summary_file);
        }
        return cmd_broker(broker_listen, broker_port, run);
    } catch (const std::exception& e) {
        std::cerr << "twinbench: " << e.what() << '\n';
        return 1;
    }
}
