#include "twinbench/analysis.hpp"

#include "twinbench/record_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace twinbench::analysis {

namespace fs = std::filesystem;

AnalysisError::AnalysisError(AnalysisErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}

namespace {

using Key = std::pair<std::string, std::uint64_t>;

std::string key_text(const Key& k)
{
    return "(" + k.first + ", " + std::to_string(k.second) + ")";
}

std::map<Key, const agents::LogRecord*> index_log(const agents::SendLog& log, const char* which)
{
    std::map<Key, const agents::LogRecord*> index;
    for (const auto& r : log) {
        if (!index.emplace(Key{r.client_id, r.seq}, &r).second) {
            throw AnalysisError(AnalysisErrc::duplicate_key,
                                std::string("duplicate key ") + key_text({r.client_id, r.seq}) + " in " + which +
                                    " log");
        }
    }
    return index;
}

std::string fixed(double v, int digits)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string percent_cell(const std::optional<int>& v)
{
    return v ? std::to_string(*v) + "%" : "-";
}

} // namespace

JoinResult join_logs(const agents::SendLog& send, const agents::RecvLog& recv)
{
    const auto sends = index_log(send, "send");
    const auto recvs = index_log(recv, "recv");
    JoinResult out;
    out.timings.reserve(std::min(send.size(), recv.size()));
    for (const auto& s : send) {
        auto it = recvs.find({s.client_id, s.seq});
        if (it == recvs.end()) {
            out.unmatched_sends.push_back(s);
            continue;
        }
        out.timings.push_back({s.client_id, s.seq, s.timestamp, it->second->timestamp});
    }
    for (const auto& r : recv) {
        if (!sends.contains({r.client_id, r.seq})) {
            out.unmatched_recvs.push_back(r);
        }
    }
    return out;
}

std::vector<double> latencies_ms(const std::vector<MessageTiming>& timings)
{
    std::vector<double> out;
    out.reserve(timings.size());
    for (const auto& t : timings) {
        out.push_back(t.latency_ms());
    }
    return out;
}

SummaryStats summary(std::span<const double> xs)
{
    if (xs.empty()) {
        throw AnalysisError(AnalysisErrc::empty_input, "summary of an empty sample");
    }
    SummaryStats s;
    s.count = xs.size();
    double sum = 0.0;
    s.min = xs.front();
    s.max = xs.front();
    for (double x : xs) {
        sum += x;
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
    }
    s.average = sum / static_cast<double>(xs.size());
    double squares = 0.0;
    for (double x : xs) {
        squares += (x - s.average) * (x - s.average);
    }
    s.std_dev = std::sqrt(squares / static_cast<double>(xs.size()));
    return s;
}

DeadlineMiss deadline_miss(std::span<const double> xs, double threshold_ms)
{
    if (!(threshold_ms > 0.0)) {
        throw AnalysisError(AnalysisErrc::invalid_argument, "deadline threshold must be positive");
    }
    if (xs.empty()) {
        throw AnalysisError(AnalysisErrc::empty_input, "deadline check of an empty sample");
    }
    DeadlineMiss m;
    m.total = xs.size();
    m.missed = static_cast<std::size_t>(std::count_if(xs.begin(), xs.end(), [&](double x) { return x > threshold_ms; }));
    m.fraction = static_cast<double>(m.missed) / static_cast<double>(m.total);
    return m;
}

std::vector<MinuteCount> per_minute(const agents::RecvLog& recv, Nanos start)
{
    constexpr std::int64_t minute_ns = 60'000'000'000;
    std::map<std::int64_t, std::uint64_t> buckets;
    for (const auto& r : recv) {
        const std::int64_t offset = (r.timestamp - start).count();
        // floor division so that arrivals before `start` land in negative minutes
        const std::int64_t minute = offset >= 0 ? offset / minute_ns : -((-offset + minute_ns - 1) / minute_ns);
        ++buckets[minute];
    }
    std::vector<MinuteCount> out;
    if (buckets.empty()) {
        return out;
    }
    const std::int64_t first = std::min<std::int64_t>(0, buckets.begin()->first);
    for (std::int64_t m = first; m <= buckets.rbegin()->first; ++m) {
        auto it = buckets.find(m);
        out.push_back({m, it == buckets.end() ? 0 : it->second});
    }
    return out;
}

double sustained_per_minute(const std::vector<MinuteCount>& series)
{
    if (series.empty()) {
        throw AnalysisError(AnalysisErrc::empty_input, "no receive buckets");
    }
    if (series.size() == 1) {
        return static_cast<double>(series.front().count);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < series.size(); ++i) {
        sum += static_cast<double>(series[i].count);
    }
    return sum / static_cast<double>(series.size() - 1);
}

std::vector<Bin> histogram(std::span<const double> xs, double width)
{
    if (!(width > 0.0)) {
        throw AnalysisError(AnalysisErrc::invalid_argument, "bin width must be positive");
    }
    std::vector<Bin> out;
    if (xs.empty()) {
        return out;
    }
    std::map<std::int64_t, std::uint64_t> counts;
    for (double x : xs) {
        ++counts[static_cast<std::int64_t>(std::floor(x / width))];
    }
    for (std::int64_t k = counts.begin()->first; k <= counts.rbegin()->first; ++k) {
        auto it = counts.find(k);
        out.push_back({static_cast<double>(k) * width, it == counts.end() ? 0 : it->second});
    }
    return out;
}

int round_half_up(double value)
{
    return static_cast<int>(std::floor(value + 0.5));
}

std::vector<Reduction> compare(const std::map<int, SummaryStats>& by_scenario)
{
    auto base = by_scenario.find(1);
    if (base == by_scenario.end()) {
        throw AnalysisError(AnalysisErrc::missing_baseline, "scenario 1 baseline is missing");
    }
    const auto pct = [](double value, double reference) { return round_half_up(100.0 * (1.0 - value / reference)); };
    std::vector<Reduction> rows;
    for (const auto& [scenario, stats] : by_scenario) {
        Reduction r{scenario, std::nullopt, std::nullopt, std::nullopt};
        if (scenario != 1) {
            r.average_pct = pct(stats.average, base->second.average);
            r.max_pct = pct(stats.max, base->second.max);
            r.min_pct = pct(stats.min, base->second.min);
        }
        rows.push_back(r);
    }
    return rows;
}

void write_timings_csv(std::ostream& out, const std::vector<MessageTiming>& timings)
{
    out << "client_id,seq,send_ns,recv_ns,latency_ms\n";
    for (const auto& t : timings) {
        out << t.client_id << ',' << t.seq << ',' << t.send_ts.count() << ',' << t.recv_ts.count() << ','
            << fixed(t.latency_ms(), 6) << '\n';
    }
}

void write_summary_csv(std::ostream& out, const std::map<int, SummaryStats>& by_scenario)
{
    out << "scenario,count,avg_ms,std_ms,max_ms,min_ms\n";
    for (const auto& [scenario, s] : by_scenario) {
        out << scenario << ',' << s.count << ',' << fixed(s.average, 6) << ',' << fixed(s.std_dev, 6) << ','
            << fixed(s.max, 6) << ',' << fixed(s.min, 6) << '\n';
    }
}

std::map<int, SummaryStats> read_summary_csv(const std::string& text)
{
    std::map<int, SummaryStats> out;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("scenario,count,avg_ms,std_ms,max_ms,min_ms", 0) != 0) {
        throw std::runtime_error("summary CSV lacks the scenario,count,avg_ms,std_ms,max_ms,min_ms header");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(row, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != 6) {
            throw std::runtime_error("summary row needs 6 columns: '" + line + "'");
        }
        SummaryStats s;
        s.count = std::stoull(cells[1]);
        s.average = std::stod(cells[2]);
        s.std_dev = std::stod(cells[3]);
        s.max = std::stod(cells[4]);
        s.min = std::stod(cells[5]);
        out[std::stoi(cells[0])] = s;
    }
    return out;
}

void write_per_minute_csv(std::ostream& out, const std::vector<MinuteCount>& series)
{
    out << "minute,count\n";
    for (const auto& m : series) {
        out << m.minute << ',' << m.count << '\n';
    }
}

void write_histogram_csv(std::ostream& out, const std::vector<Bin>& bins)
{
    out << "lower_ms,count\n";
    for (const auto& b : bins) {
        out << fixed(b.lower_edge, 3) << ',' << b.count << '\n';
    }
}

void write_compare_csv(std::ostream& out, const std::vector<Reduction>& rows)
{
    out << "scenario,avg_reduction_pct,max_reduction_pct,min_reduction_pct\n";
    const auto cell = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
    for (const auto& r : rows) {
        out << r.scenario << ',' << cell(r.average_pct) << ',' << cell(r.max_pct) << ',' << cell(r.min_pct) << '\n';
    }
}

void print_table(std::ostream& out, const std::map<int, SummaryStats>& by_scenario,
                 const std::map<int, DeadlineMiss>& misses, double deadline_ms)
{
    std::vector<Reduction> reductions;
    if (by_scenario.contains(1)) {
        reductions = compare(by_scenario);
    }
    const std::string miss_header = "Miss>" + fixed(deadline_ms, 0) + "ms";
    out << std::left << std::setw(9) << "Scenario" << std::right << std::setw(8) << "Count" << std::setw(10)
        << "Average" << std::setw(15) << "Std Deviation" << std::setw(10) << "Max" << std::setw(10) << "Min";
    if (!misses.empty()) {
        out << std::setw(13) << miss_header;
    }
    if (!reductions.empty()) {
        out << std::setw(10) << "Avg red." << std::setw(10) << "Max red." << std::setw(10) << "Min red.";
    }
    out << '\n';
    for (const auto& [scenario, s] : by_scenario) {
        out << std::left << std::setw(9) << scenario << std::right << std::setw(8) << s.count << std::setw(10)
            << fixed(s.average, 2) << std::setw(15) << fixed(s.std_dev, 3) << std::setw(10) << fixed(s.max, 2)
            << std::setw(10) << fixed(s.min, 2);
        if (!misses.empty()) {
            auto m = misses.find(scenario);
            out << std::setw(13) << (m == misses.end() ? "-" : fixed(100.0 * m->second.fraction, 2) + "%");
        }
        if (!reductions.empty()) {
            auto r = std::find_if(reductions.begin(), reductions.end(),
                                  [&](const Reduction& x) { return x.scenario == scenario; });
            out << std::setw(10) << percent_cell(r->average_pct) << std::setw(10) << percent_cell(r->max_pct)
                << std::setw(10) << percent_cell(r->min_pct);
        }
        out << '\n';
    }
}

std::size_t report_directory(const fs::path& root, const ReportOptions& options, std::ostream& out)
{
    struct Group {
        std::map<int, SummaryStats> summaries;
        std::map<int, DeadlineMiss> misses;
    };
    std::map<fs::path, Group> groups;
    std::size_t processed = 0;

    for (const auto& dir : orchestrator::find_records(root)) {
        const auto record = orchestrator::load_record(dir);
        const auto joined = join_logs(record.send, record.recv);
        const auto latencies = latencies_ms(joined.timings);
        {
            std::ofstream f(dir / "timings.csv");
            write_timings_csv(f, joined.timings);
        }
        {
            std::ofstream f(dir / "per_minute.csv");
            write_per_minute_csv(f, per_minute(record.recv));
        }
        {
            std::ofstream f(dir / "histogram.csv");
            write_histogram_csv(f, histogram(latencies, options.bin_ms));
        }
        ++processed;
        if (latencies.empty()) {
            continue;
        }
        // Records of different scenarios that share a situation point form one comparison group.
        const fs::path group = orchestrator::record_path(record).lexically_relative(
            fs::path("scenario" + std::to_string(record.scenario.id)));
        groups[group].summaries[record.scenario.id] = summary(latencies);
        groups[group].misses[record.scenario.id] = deadline_miss(latencies, options.deadline_ms);
    }

    for (const auto& [group, g] : groups) {
        const fs::path dir = root / "report" / group;
        fs::create_directories(dir);
        {
            std::ofstream f(dir / "summary.csv");
            write_summary_csv(f, g.summaries);
        }
        if (g.summaries.contains(1)) {
            std::ofstream f(dir / "compare.csv");
            write_compare_csv(f, compare(g.summaries));
        }
        out << "== " << group.generic_string() << '\n';
        print_table(out, g.summaries, g.misses, options.deadline_ms);
        out << '\n';
    }
    return processed;
}

void report_summary_file(const fs::path& summary_csv, std::ostream& out)
{
    const auto summaries = read_summary_csv(orchestrator::read_file(summary_csv));
    print_table(out, summaries);
    write_compare_csv(out << '\n', compare(summaries));
}

} // namespace twinbench::analysis
