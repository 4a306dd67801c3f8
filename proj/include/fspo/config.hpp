#pragma once

// Flat "key = value" run configuration. Unknown keys are rejected with the
// offending key and line; unspecified clip parameters fall back to the
// per-method defaults.

#include <cstdint>
#include <string>
#include <string_view>

#include "fspo/objectives.hpp"
#include "fspo/trainer.hpp"

namespace fspo {

struct RunConfig {
  TrainConfig train;
  std::string out_dir = "out";
  int bin_size = 1;
  int min_length = 0;
};

/// `source` names the file in error messages.
RunConfig parse_run_config(std::string_view text, std::string_view source = "config");
RunConfig load_run_config(const std::string& path);

/// Canonical text of every field; parse_run_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

/// The clip-spec subset of the same format.
std::string clip_spec_to_text(const ClipSpec& spec);
ClipSpec clip_spec_from_text(std::string_view text);

}  // namespace fspo
