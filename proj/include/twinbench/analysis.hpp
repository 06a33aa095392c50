#pragma once

// Latency and throughput metrics over experiment logs, and the report writer
// behind `twinbench report`.

#include "twinbench/agents.hpp"
#include "twinbench/orchestrator.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace twinbench::analysis {

enum class AnalysisErrc { duplicate_key, empty_input, missing_baseline, invalid_argument };

class AnalysisError : public std::runtime_error {
public:
    AnalysisError(AnalysisErrc code, const std::string& what);
    AnalysisErrc code() const noexcept { return code_; }

private:
    AnalysisErrc code_;
};

struct MessageTiming {
    std::string client_id;
    std::uint64_t seq = 0;
    Nanos send_ts{0};
    Nanos recv_ts{0};

    double latency_ms() const { return to_ms(recv_ts - send_ts); }
};

struct JoinResult {
    std::vector<MessageTiming> timings;      // in send-log order
    std::vector<agents::LogRecord> unmatched_sends;
    std::vector<agents::LogRecord> unmatched_recvs;
};

/// Inner join on (client_id, seq). Throws AnalysisError(duplicate_key) naming
/// the first repeated key in either log.
JoinResult join_logs(const agents::SendLog& send, const agents::RecvLog& recv);

std::vector<double> latencies_ms(const std::vector<MessageTiming>& timings);

struct SummaryStats {
    std::size_t count = 0;
    double average = 0.0;
    double std_dev = 0.0; // population
    double max = 0.0;
    double min = 0.0;
};

/// Throws AnalysisError(empty_input) for an empty sample.
SummaryStats summary(std::span<const double> latencies_ms);

struct DeadlineMiss {
    double fraction = 0.0;
    std::size_t missed = 0;
    std::size_t total = 0;
};

/// Share of latencies strictly above `threshold_ms`.
DeadlineMiss deadline_miss(std::span<const double> latencies_ms, double threshold_ms);

struct MinuteCount {
    std::int64_t minute = 0;
    std::uint64_t count = 0;
    bool operator==(const MinuteCount&) const = default;
};

/// Receive counts per minute since `start`, zero-filled up to the last busy minute.
std::vector<MinuteCount> per_minute(const agents::RecvLog& recv, Nanos start = Nanos{0});

/// Mean count over complete minutes, i.e. every bucket except the last one
/// (which the run usually ends inside). A single-bucket series returns that
/// bucket. Throws AnalysisError(empty_input) for an empty series.
double sustained_per_minute(const std::vector<MinuteCount>& series);

struct Bin {
    double lower_edge = 0.0;
    std::uint64_t count = 0;
    bool operator==(const Bin&) const = default;
};

/// Half-open bins [k*w, (k+1)*w) from the lowest to the highest occupied bin.
std::vector<Bin> histogram(std::span<const double> latencies_ms, double bin_width_ms);

/// Percent reduction vs the scenario-1 baseline, rounded half up.
struct Reduction {
    int scenario = 0;
    std::optional<int> average_pct; // empty for the baseline row
    std::optional<int> max_pct;
    std::optional<int> min_pct;
};

int round_half_up(double value);

/// Throws AnalysisError(missing_baseline) when scenario 1 is absent.
std::vector<Reduction> compare(const std::map<int, SummaryStats>& by_scenario);

void write_timings_csv(std::ostream& out, const std::vector<MessageTiming>& timings);
void write_summary_csv(std::ostream& out, const std::map<int, SummaryStats>& by_scenario);
std::map<int, SummaryStats> read_summary_csv(const std::string& text);
void write_per_minute_csv(std::ostream& out, const std::vector<MinuteCount>& series);
void write_histogram_csv(std::ostream& out, const std::vector<Bin>& bins);
void write_compare_csv(std::ostream& out, const std::vector<Reduction>& rows);

/// Human-readable table with the Average / Std Deviation / Max / Min columns
/// plus the reductions against scenario 1 when it is present.
void print_table(std::ostream& out, const std::map<int, SummaryStats>& by_scenario,
                 const std::map<int, DeadlineMiss>& misses = {}, double deadline_ms = 0.0);

struct ReportOptions {
    double deadline_ms = 200.0;
    double bin_ms = 25.0;
};

/// Writes per-record timings/per_minute/histogram CSVs next to each record,
/// and summary.csv plus compare.csv per situation point under `root`.
/// Prints the tables to `out`. Returns the number of records processed.
std::size_t report_directory(const std::filesystem::path& root, const ReportOptions& options, std::ostream& out);

/// Compare table straight from a summary.csv file.
void report_summary_file(const std::filesystem::path& summary_csv, std::ostream& out);

} // namespace twinbench::analysis
