#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tokenpool/cost_model.hpp"
#include "tokenpool/metrics.hpp"
#include "tokenpool/prefix_pool.hpp"
#include "tokenpool/scheduler.hpp"
#include "tokenpool/workload.hpp"

namespace tokenpool {

enum class PolicyKind {
  kPooled,            // segment pool + matching dispatch + DP scheduler
  kCacheAwareRouter,  // per-instance caches, hit/load-scored routing
  kPdDisagg,          // disjoint prefill/decode pools with cache transfer
  kStrictLocality     // pooled tree, remote instances only on overflow
};

PolicyKind policy_from_string(const std::string& s);
std::string policy_to_string(PolicyKind k);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kPooled;
  int prefill_instances = 2;  // pd_disagg split; must sum to n_instances
  int decode_instances = 6;
  double w_hit = 1.0;   // router: score per local hit token
  double w_load = 1.0;  // router: penalty per queued token
};

struct SimConfig {
  HardwareProfile profile;
  LatencyModel model;          // uncalibrated -> calibrate(profile)
  int n_instances = 8;
  long segment_size = 0;       // 0 -> default_segment_size(profile)
  long slot_capacity = 4096;   // segments per instance
  double overload_delta = 0.2;
  PolicyConfig policy;
  long chunk_size = 512;
  double slo_multiplier = 10.0;
  int max_prefill_window = 64;  // prefill requests offered to the DP at once
  int admission_retries = 3;    // iterations before a blocked insert drops
  double cv_window = 10.0;      // simulated seconds
  std::uint64_t seed = 1;
  long system_prompt_len = 1024;  // must match the trace's spec
  double doc_len_mean = 16384;    // must match the trace's spec
  bool check_invariants = false;  // assert pool invariants after every step
};

struct IterationLog {
  std::vector<double> busy_seconds;     // per instance
  std::vector<double> cache_accesses;   // per instance
  double latency = 0;                   // cluster iteration latency
  double comm_bytes = 0;
  long evictions = 0;
  long replications = 0;
  long completed = 0;
  long dropped = 0;
  long heavy_keys = 0;  // heavy-hitter set size after rebalance
};

// Deterministic iteration-stepped cluster simulation. One instance per
// logical run; independent runs are safe in parallel.
class Simulator {
 public:
  Simulator(const SimConfig& config, std::vector<TraceRecord> trace);
  ~Simulator();

  bool done() const;
  IterationLog step();
  MetricsReport report() const;

  const PrefixPool& pool() const;  // global pool (pooled / strict_locality)
  long invariant_violations() const;
  double clock_seconds() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

MetricsReport run(const SimConfig& config, const std::vector<TraceRecord>& trace);

// Unique-segment footprint of a trace (segments needed to cache every
// session's full final sequence); used to size capacity-limited experiments.
long unique_segment_footprint(const SimConfig& config,
                              const std::vector<TraceRecord>& trace);

}  // namespace tokenpool
