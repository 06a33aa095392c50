#pragma once

// Experiment matrix: broker/twin placement per scenario, workload sweeps per
// situation, and the runners that wire broker, agents and latency emulation
// together in sim or tcp mode.

#include "twinbench/agents.hpp"
#include "twinbench/broker.hpp"
#include "twinbench/netem.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace twinbench::orchestrator {

using netem::DelayConfig;
using netem::NodeId;
using netem::NodeKind;

enum class Mode { sim, tcp };
std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct ScenarioConfig {
    int id = 0;
    NodeId broker_node;
    NodeId twin_node;
    std::map<NodeKind, DelayConfig> egress_delays;

    /// Scenario 1 (cloud only), 2 (fog broker, cloud twin) or 3 (fog only).
    static ScenarioConfig preset(int id);

    DelayConfig egress(NodeKind kind) const;
    ScenarioConfig without_delays() const;
    bool operator==(const ScenarioConfig&) const = default;
};

enum class Situation { A, B, C, custom };
std::string to_string(Situation s);
Situation parse_situation(const std::string& text);

struct SituationPoint {
    Situation situation = Situation::custom;
    std::uint32_t sources = 1;
    std::uint64_t messages_per_source = 0;
    std::int64_t interval_ms = 0;
    std::size_t payload_bytes = 64;

    std::string name() const;
    bool operator==(const SituationPoint&) const = default;
};

/// `ci` caps situation A at 10 000 messages per source; `full` adds 100 000.
enum class Profile { ci, full };

std::vector<SituationPoint> sweep(Situation situation, Profile profile = Profile::ci);

struct PointOverrides {
    std::optional<std::uint32_t> sources;
    std::optional<std::uint64_t> messages;
    std::optional<std::int64_t> interval_ms;
    std::optional<std::size_t> payload_bytes;
};

/// Pins the overridden fields on every point and drops the duplicates.
std::vector<SituationPoint> apply_overrides(const std::vector<SituationPoint>& points,
                                            const PointOverrides& overrides);

struct RunOptions {
    Mode mode = Mode::sim;
    std::uint64_t seed = 1;
    broker::BrokerConfig broker;
    std::uint8_t qos = 1;
    double timeout_factor = 10.0;
    bool record_trace = false;
};

struct ExperimentRecord {
    ScenarioConfig scenario;
    SituationPoint point;
    Mode mode = Mode::sim;
    std::uint64_t seed = 0;
    broker::BrokerConfig broker;
    std::uint8_t qos = 1;
    std::uint32_t repeat = 0;
    double timeout_factor = 10.0;
    agents::SendLog send;
    agents::RecvLog recv;
    agents::IntegrityReport integrity;
    std::string created_at;
    std::vector<netem::TraceEntry> trace; // sim mode with record_trace only; not persisted

    RunOptions options() const;
};

enum class RunErrc { timeout, port_in_use, unsupported, replay_mismatch, setup_failed };

class RunError : public std::runtime_error {
public:
    RunError(RunErrc code, const std::string& what);
    RunErrc code() const noexcept { return code_; }

private:
    RunErrc code_;
};

std::string source_id(std::uint32_t index);
inline constexpr const char* twin_id = "twin";
inline constexpr const char* twin_filter = "dt/+/data";

/// Theoretical run length (last scheduled publish plus path and throttling
/// allowance); the drain timeout is `timeout_factor` times this.
Nanos nominal_duration(const ScenarioConfig& scenario, const SituationPoint& point, const RunOptions& options);

ExperimentRecord run_experiment(const ScenarioConfig& scenario, const SituationPoint& point,
                                const RunOptions& options);

struct MatrixFailure {
    int scenario = 0;
    SituationPoint point;
    std::uint32_t repeat = 0;
    std::string error;
};

struct MatrixResult {
    std::vector<ExperimentRecord> records;
    std::vector<MatrixFailure> failures;
};

/// Runs every point for every scenario; point i (counting repeats) uses
/// seed + i. Failures are collected and the sweep continues.
MatrixResult run_matrix(const std::vector<ScenarioConfig>& scenarios, const std::vector<SituationPoint>& points,
                        const RunOptions& options, std::uint32_t repeats = 1);

/// Re-runs a sim record from its stored configuration. Throws
/// RunError(unsupported) for tcp records and RunError(replay_mismatch) when
/// the regenerated logs differ from the stored ones.
ExperimentRecord replay(const ExperimentRecord& record);

} // namespace twinbench::orchestrator
