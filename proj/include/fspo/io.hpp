#pragma once

// On-disk formats: policy table dump, line-delimited SeqRecord logs, and the
// CSV tables (metrics, fairness bins, theory curves). Every file starts with
// a header line naming the tool version and the config hash.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "fspo/diagnostics.hpp"
#include "fspo/policy.hpp"
#include "fspo/trainer.hpp"

namespace fspo {

std::uint64_t fnv1a64(std::string_view text);
/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
double parse_double(std::string_view text);

/// "# fspo-lab <version> config=<16 hex digits>"
std::string header_line(std::uint64_t config_hash);

// Policy dump. Logits and temperature are written as hex floats so a reload
// is bit-identical.
std::string policy_to_text(const TabularPolicy<double>& policy);
TabularPolicy<double> policy_from_text(std::string_view text);
void save_policy(const std::string& path, const TabularPolicy<double>& policy, std::uint64_t config_hash);
TabularPolicy<double> load_policy(const std::string& path);

// SeqRecord log, one JSON object per line. A header object
// {"header": {...}} may appear and is skipped by the reader.
std::string record_to_json(const SeqRecord& record);
SeqRecord record_from_json(std::string_view line);
std::string log_header_json(std::uint64_t config_hash);
/// Reads every record; malformed lines raise ConfigError naming the line number.
std::vector<SeqRecord> read_records(std::istream& in);
void write_records(std::ostream& out, const std::vector<SeqRecord>& records, std::uint64_t config_hash);

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics, std::uint64_t config_hash);

void write_fairness_csv(std::ostream& out, const FairnessReport& report, std::uint64_t config_hash);
std::string fairness_report_json(const FairnessReport& report, std::uint64_t config_hash);

struct TheoryRow {
  int length;
  double c_rloo;
  double c_gspo;
  double c_fspo;
};

struct TheoryTable {
  std::string header;  // first line, verbatim
  std::vector<TheoryRow> rows;
};

std::string theory_csv(const TheoryTable& table);
TheoryTable parse_theory_csv(std::string_view text);

}  // namespace fspo
