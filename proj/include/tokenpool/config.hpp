#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tokenpool/sim.hpp"
#include "tokenpool/workload.hpp"

namespace tokenpool {

// Everything one experiment needs: hardware, policy, scheduler and pool
// knobs, plus either an inline trace spec or a path to a pregenerated
// trace. Parsed from a sectioned key-value file ([section] / key = value).
struct ExperimentConfig {
  std::string profile_path;  // optional key-value hardware profile file
  HardwareProfile profile;
  PolicyConfig policy;

  int n_instances = 8;
  long segment_size = 0;   // 0 -> derived from the profile
  long slot_capacity = 4096;
  double overload_delta = 0.2;
  bool allow_small_segments = false;

  long chunk_size = 512;
  double slo_multiplier = 10.0;
  int max_prefill_window = 64;

  std::string trace_path;  // when set, wins over the inline spec
  TraceSpec trace;

  std::uint64_t seed = 1;
  std::string output_dir = ".";
  double cv_window = 10.0;
  bool check_invariants = false;

  SimConfig sim_config() const;
  // Throws std::invalid_argument with a field-level message.
  void validate() const;
};

ExperimentConfig parse_config(std::istream& in);
// Resolves profile_path / trace_path relative to the config file's
// directory.
ExperimentConfig load_config(const std::string& path);
void serialize_config(const ExperimentConfig& c, std::ostream& out);

bool config_equal(const ExperimentConfig& a, const ExperimentConfig& b);

// Plain `key = value` lines, same hardware keys as the [hardware] section.
HardwareProfile load_profile(const std::string& path);

// Sweepable dotted keys ("pool.slot_capacity", "trace.rate_lambda", ...).
// Returns false on an unknown key.
bool set_param(ExperimentConfig& c, const std::string& key,
               const std::string& value);
std::vector<std::string> known_params();

}  // namespace tokenpool
