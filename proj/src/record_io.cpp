#include "twinbench/record_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace twinbench::orchestrator {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(const std::string& s)
{
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    return v;
}

std::uint64_t parse_u64(const std::string& s)
{
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("not an unsigned integer: '" + s + "'");
    }
    return v;
}

std::int64_t parse_i64(const std::string& s)
{
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw std::invalid_argument("not an integer: '" + s + "'");
    }
    return v;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key)
{
    auto it = kv.find(key);
    if (it == kv.end()) {
        throw std::runtime_error("missing key '" + key + "'");
    }
    return it->second;
}

template <class T>
std::string optional_text(const std::optional<T>& v)
{
    if (!v) {
        return "none";
    }
    if constexpr (std::is_floating_point_v<T>) {
        return format_double(*v);
    } else {
        return std::to_string(*v);
    }
}

} // namespace

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

std::map<std::string, std::string> parse_key_values(const std::string& text)
{
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("expected key=value, got '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

std::string format_log_csv(const agents::SendLog& log)
{
    std::string out = "client_id,seq,timestamp_ns\n";
    out.reserve(out.size() + log.size() * 24);
    for (const auto& r : log) {
        out += r.client_id;
        out += ',';
        out += std::to_string(r.seq);
        out += ',';
        out += std::to_string(r.timestamp.count());
        out += '\n';
    }
    return out;
}

agents::SendLog parse_log_csv(const std::string& text)
{
    agents::SendLog log;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "client_id,seq,timestamp_ns") {
        throw std::runtime_error("log CSV lacks the client_id,seq,timestamp_ns header");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) {
            throw std::runtime_error("bad log line '" + line + "'");
        }
        log.push_back({line.substr(0, a), parse_u64(line.substr(a + 1, b - a - 1)),
                       Nanos{parse_i64(line.substr(b + 1))}});
    }
    return log;
}

std::string format_integrity(const agents::IntegrityReport& r)
{
    std::string gaps;
    for (const auto& g : r.gaps) {
        if (!gaps.empty()) {
            gaps += ',';
        }
        gaps += g.client_id + ':' + std::to_string(g.seq);
    }
    std::ostringstream out;
    out << "expected=" << r.expected << '\n'
        << "received=" << r.received << '\n'
        << "gap_count=" << r.gaps.size() << '\n'
        << "gaps=" << gaps << '\n'
        << "duplicates=" << r.duplicates << '\n'
        << "out_of_order=" << r.out_of_order << '\n'
        << "unparsed=" << r.unparsed << '\n'
        << "unexpected=" << r.unexpected << '\n';
    return out.str();
}

agents::IntegrityReport parse_integrity(const std::string& text)
{
    const auto kv = parse_key_values(text);
    agents::IntegrityReport r;
    r.expected = parse_u64(require(kv, "expected"));
    r.received = parse_u64(require(kv, "received"));
    r.duplicates = parse_u64(require(kv, "duplicates"));
    r.out_of_order = parse_u64(require(kv, "out_of_order"));
    r.unparsed = parse_u64(require(kv, "unparsed"));
    r.unexpected = parse_u64(require(kv, "unexpected"));
    std::istringstream gaps(require(kv, "gaps"));
    std::string item;
    while (std::getline(gaps, item, ',')) {
        const auto colon = item.rfind(':');
        if (colon == std::string::npos) {
            throw std::runtime_error("bad gap entry '" + item + "'");
        }
        r.gaps.push_back({item.substr(0, colon), parse_u64(item.substr(colon + 1))});
    }
    return r;
}

std::string format_config(const ExperimentRecord& rec)
{
    std::ostringstream out;
    out << "scenario=" << rec.scenario.id << '\n'
        << "broker_node=" << rec.scenario.broker_node.to_string() << '\n'
        << "twin_node=" << rec.scenario.twin_node.to_string() << '\n';
    for (const auto& [kind, d] : rec.scenario.egress_delays) {
        out << "delay." << netem::to_string(kind) << '=' << format_double(d.base_ms) << ','
            << format_double(d.variation_ms) << '\n';
    }
    out << "situation=" << to_string(rec.point.situation) << '\n'
        << "sources=" << rec.point.sources << '\n'
        << "messages_per_source=" << rec.point.messages_per_source << '\n'
        << "interval_ms=" << rec.point.interval_ms << '\n'
        << "payload_bytes=" << rec.point.payload_bytes << '\n'
        << "mode=" << to_string(rec.mode) << '\n'
        << "seed=" << rec.seed << '\n'
        << "qos=" << static_cast<int>(rec.qos) << '\n'
        << "max_inflight=" << rec.broker.max_inflight << '\n'
        << "queue_cap=" << optional_text(rec.broker.queue_cap) << '\n'
        << "rate_limit_per_min=" << optional_text(rec.broker.delivery_rate_limit) << '\n'
        << "repeat=" << rec.repeat << '\n'
        << "timeout_factor=" << format_double(rec.timeout_factor) << '\n'
        << "created_at=" << rec.created_at << '\n';
    return out.str();
}

fs::path record_path(const ExperimentRecord& rec)
{
    std::string leaf = rec.point.name();
    if (rec.repeat > 0) {
        leaf += "-rep" + std::to_string(rec.repeat);
    }
    return fs::path("scenario" + std::to_string(rec.scenario.id)) / to_string(rec.point.situation) / leaf;
}

void save_record(const ExperimentRecord& rec, const fs::path& dir)
{
    fs::create_directories(dir);
    write_file(dir / "config.txt", format_config(rec));
    write_file(dir / "send.csv", format_log_csv(rec.send));
    write_file(dir / "recv.csv", format_log_csv(rec.recv));
    write_file(dir / "integrity.txt", format_integrity(rec.integrity));
}

ExperimentRecord load_record(const fs::path& dir)
{
    const auto kv = parse_key_values(read_file(dir / "config.txt"));
    ExperimentRecord rec;
    rec.scenario.id = static_cast<int>(parse_i64(require(kv, "scenario")));
    rec.scenario.broker_node = netem::parse_node(require(kv, "broker_node"));
    rec.scenario.twin_node = netem::parse_node(require(kv, "twin_node"));
    for (const auto& [key, value] : kv) {
        if (key.rfind("delay.", 0) != 0) {
            continue;
        }
        const auto comma = value.find(',');
        if (comma == std::string::npos) {
            throw std::runtime_error("bad delay entry '" + value + "'");
        }
        rec.scenario.egress_delays[netem::parse_node(key.substr(6)).kind] =
            DelayConfig{parse_double(value.substr(0, comma)), parse_double(value.substr(comma + 1))};
    }
    rec.point.situation = parse_situation(require(kv, "situation"));
    rec.point.sources = static_cast<std::uint32_t>(parse_u64(require(kv, "sources")));
    rec.point.messages_per_source = parse_u64(require(kv, "messages_per_source"));
    rec.point.interval_ms = parse_i64(require(kv, "interval_ms"));
    rec.point.payload_bytes = parse_u64(require(kv, "payload_bytes"));
    rec.mode = parse_mode(require(kv, "mode"));
    rec.seed = parse_u64(require(kv, "seed"));
    rec.qos = static_cast<std::uint8_t>(parse_u64(require(kv, "qos")));
    rec.broker.max_inflight = parse_u64(require(kv, "max_inflight"));
    if (const auto& cap = require(kv, "queue_cap"); cap != "none") {
        rec.broker.queue_cap = parse_u64(cap);
    }
    if (const auto& rate = require(kv, "rate_limit_per_min"); rate != "none") {
        rec.broker.delivery_rate_limit = parse_double(rate);
    }
    if (auto it = kv.find("repeat"); it != kv.end()) {
        rec.repeat = static_cast<std::uint32_t>(parse_u64(it->second));
    }
    if (auto it = kv.find("timeout_factor"); it != kv.end()) {
        rec.timeout_factor = parse_double(it->second);
    }
    if (auto it = kv.find("created_at"); it != kv.end()) {
        rec.created_at = it->second;
    }
    rec.send = parse_log_csv(read_file(dir / "send.csv"));
    rec.recv = parse_log_csv(read_file(dir / "recv.csv"));
    rec.integrity = parse_integrity(read_file(dir / "integrity.txt"));
    return rec;
}

std::vector<fs::path> find_records(const fs::path& root)
{
    std::vector<fs::path> out;
    if (fs::exists(root / "config.txt")) {
        out.push_back(root);
    }
    if (fs::is_directory(root)) {
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (entry.is_directory() && fs::exists(entry.path() / "config.txt")) {
                out.push_back(entry.path());
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace twinbench::orchestrator
