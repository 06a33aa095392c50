#include "twinbench/analysis.hpp"
#include "twinbench/record_io.hpp"

#include <doctest.h>

#include <sstream>

using namespace twinbench;
using namespace twinbench::analysis;
namespace fs = std::filesystem;

namespace {

Nanos ms(double v)
{
    return from_ms(v);
}

const std::map<int, SummaryStats> reference_table{
    {1, {1000, 182.45, 27.932, 349.35, 111.82}},
    {2, {1000, 84.43, 20.417, 205.83, 52.51}},
    {3, {1000, 66.08, 22.626, 205.63, 35.13}},
};

} // namespace

TEST_CASE("join on client and sequence")
{
    const agents::SendLog send{{"c1", 0, ms(0)}, {"c1", 1, ms(10)}, {"c2", 0, ms(5)}};
    const agents::RecvLog recv{{"c2", 0, ms(50)}, {"c1", 0, ms(100)}, {"c3", 0, ms(1)}};
    const auto j = join_logs(send, recv);
    REQUIRE(j.timings.size() == 2);
    CHECK(j.timings[0].client_id == "c1");
    CHECK(j.timings[0].latency_ms() == doctest::Approx(100.0));
    CHECK(j.timings[1].latency_ms() == doctest::Approx(45.0));
    CHECK(j.unmatched_sends == std::vector<agents::LogRecord>{{"c1", 1, ms(10)}});
    CHECK(j.unmatched_recvs == std::vector<agents::LogRecord>{{"c3", 0, ms(1)}});
}

TEST_CASE("duplicate keys are rejected with the key named")
{
    const agents::SendLog send{{"c1", 4, ms(0)}, {"c1", 4, ms(1)}};
    try {
        join_logs(send, {});
        FAIL("expected duplicate_key");
    } catch (const AnalysisError& e) {
        CHECK(e.code() == AnalysisErrc::duplicate_key);
        CHECK(std::string(e.what()).find("(c1, 4)") != std::string::npos);
    }
}

TEST_CASE("summary uses the population standard deviation")
{
    const std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
    const auto s = summary(xs);
    CHECK(s.count == 8);
    CHECK(s.average == doctest::Approx(5.0));
    CHECK(s.std_dev == doctest::Approx(2.0));
    CHECK(s.max == 9.0);
    CHECK(s.min == 2.0);
    CHECK_THROWS_AS(summary(std::vector<double>{}), AnalysisError);
}

TEST_CASE("deadline miss is strictly above the threshold")
{
    const std::vector<double> xs{100, 150, 150.0001, 200, 250};
    const auto m = deadline_miss(xs, 150);
    CHECK(m.missed == 3);
    CHECK(m.fraction == doctest::Approx(0.6));
    CHECK(deadline_miss(xs, 1000).missed == 0);
    CHECK_THROWS_AS(deadline_miss(xs, 0), AnalysisError);
}

TEST_CASE("per-minute counts are zero-filled")
{
    const agents::RecvLog recv{{"c", 0, ms(1)}, {"c", 1, ms(59'999)}, {"c", 2, ms(60'000)}, {"c", 3, ms(185'000)}};
    const auto pm = per_minute(recv);
    CHECK(pm == std::vector<MinuteCount>{{0, 2}, {1, 1}, {2, 0}, {3, 1}});
    CHECK(sustained_per_minute(pm) == doctest::Approx(1.0));
    CHECK(sustained_per_minute({{0, 37}}) == 37.0);
    CHECK(per_minute({}).empty());
    CHECK_THROWS_AS(sustained_per_minute({}), AnalysisError);
}

TEST_CASE("histogram bins are half-open and contiguous")
{
    const std::vector<double> xs{30.0, 49.99, 50.0, 120.0};
    const auto h = histogram(xs, 25.0);
    CHECK(h == std::vector<Bin>{{25, 2}, {50, 1}, {75, 0}, {100, 1}});
    CHECK_THROWS_AS(histogram(xs, 0.0), AnalysisError);
}

TEST_CASE("rounding is half up")
{
    CHECK(round_half_up(53.5) == 54);
    CHECK(round_half_up(53.49) == 53);
    CHECK(round_half_up(-0.5) == 0);
}

TEST_CASE("reductions against the reference latency table")
{
    const auto rows = compare(reference_table);
    REQUIRE(rows.size() == 3);
    CHECK_FALSE(rows[0].average_pct);
    CHECK(rows[1].average_pct == 54);
    CHECK(rows[2].average_pct == 64);
    CHECK(rows[1].max_pct == 41);
    CHECK(rows[2].max_pct == 41);
    CHECK(rows[1].min_pct == 53);
    CHECK(rows[2].min_pct == 69);

    auto no_base = reference_table;
    no_base.erase(1);
    CHECK_THROWS_AS(compare(no_base), AnalysisError);
}

TEST_CASE("summary csv round trip and table")
{
    std::ostringstream csv;
    write_summary_csv(csv, reference_table);
    CHECK(csv.str().rfind("scenario,count,avg_ms,std_ms,max_ms,min_ms\n1,1000,182.450000,", 0) == 0);
    const auto back = read_summary_csv(csv.str());
    CHECK(back.at(3).average == doctest::Approx(66.08));

    std::ostringstream table;
    print_table(table, back);
    CHECK(table.str().find("Std Deviation") != std::string::npos);
    CHECK(table.str().find("182.45") != std::string::npos);
    CHECK(table.str().find("54%") != std::string::npos);
    CHECK(table.str().find("64%") != std::string::npos);
}

TEST_CASE("report over a results directory")
{
    const fs::path root = fs::temp_directory_path() / "twinbench-report-test";
    fs::remove_all(root);
    orchestrator::RunOptions o;
    const auto m = orchestrator::run_matrix(
        {orchestrator::ScenarioConfig::preset(1), orchestrator::ScenarioConfig::preset(3)},
        {{orchestrator::Situation::C, 1, 200, 80, 16}}, o);
    REQUIRE(m.failures.empty());
    for (const auto& r : m.records) {
        orchestrator::save_record(r, root / orchestrator::record_path(r));
    }
    std::ostringstream out;
    CHECK(report_directory(root, {}, out) == 2);
    const auto group = root / "report" / "C" / "src1-msg200-int80ms-pay16";
    CHECK(fs::exists(group / "summary.csv"));
    CHECK(fs::exists(group / "compare.csv"));
    const auto rec_dir = root / "scenario1" / "C" / "src1-msg200-int80ms-pay16";
    for (const char* f : {"timings.csv", "per_minute.csv", "histogram.csv"}) {
        CHECK(fs::exists(rec_dir / f));
    }
    CHECK(orchestrator::read_file(rec_dir / "timings.csv").rfind("client_id,seq,send_ns,recv_ns,latency_ms\n", 0) ==
          0);
    const auto summaries = read_summary_csv(orchestrator::read_file(group / "summary.csv"));
    CHECK(summaries.at(1).average == doctest::Approx(100).epsilon(0.02));
    CHECK(summaries.at(3).average == doctest::Approx(40).epsilon(0.05));
    CHECK(out.str().find("Miss>200ms") != std::string::npos);
    fs::remove_all(root);
}
