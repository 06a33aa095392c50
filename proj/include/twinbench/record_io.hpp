#pragma once

// On-disk layout of one experiment run:
//   <root>/scenario<id>/<situation>/<point>/config.txt    key=value lines
//                                           send.csv       client_id,seq,timestamp_ns
//                                           recv.csv
//                                           integrity.txt  key=value lines

#include "twinbench/orchestrator.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace twinbench::orchestrator {

std::string format_log_csv(const agents::SendLog& log);
agents::SendLog parse_log_csv(const std::string& text);

std::string format_integrity(const agents::IntegrityReport& report);
agents::IntegrityReport parse_integrity(const std::string& text);

std::string format_config(const ExperimentRecord& record);

/// Relative directory for a record under the output root.
std::filesystem::path record_path(const ExperimentRecord& record);

void save_record(const ExperimentRecord& record, const std::filesystem::path& dir);
ExperimentRecord load_record(const std::filesystem::path& dir);

/// Every directory below `root` (inclusive) holding a config.txt, sorted.
std::vector<std::filesystem::path> find_records(const std::filesystem::path& root);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// Parses "key=value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> parse_key_values(const std::string& text);

} // namespace twinbench::orchestrator
