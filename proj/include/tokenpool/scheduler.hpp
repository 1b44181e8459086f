#pragma once

#include <vector>

#include "tokenpool/cost_model.hpp"

namespace tokenpool {

enum class Phase { kPrefill, kDecode };

struct PhaseRequest {
  int request_id = 0;
  int session_id = 0;
  Phase phase = Phase::kPrefill;
  long context_len = 0;  // prefix + pending input, tokens
  long input_len = 0;    // tokens this iteration; 1 for decode
  double slo_tbt = 0;    // per-request latency target; <= 0 means "use default"
};

struct PlannedBatch {
  std::vector<int> request_ids;
  int dop = 1;
  Phase phase = Phase::kPrefill;
  double est_latency = 0;
};

struct ScheduleDecision {
  std::vector<PlannedBatch> batches;
  double objective = 0;  // sum of batch_size * batch_latency terms
  bool fallback_used = false;
};

// Clips each prefill request's input to chunk_size for this iteration;
// the remainder stays pending with the caller. Order preserved.
std::vector<PhaseRequest> chunk_prefill(std::vector<PhaseRequest> requests,
                                        long chunk_size);

// Goodput-oriented plan: decode requests are packed into per-instance
// DoP-1 batches by a balanced greedy fill, then a DP over the
// context-length-sorted prefill requests picks batch boundaries and DoP
// under the SLO, falling back to throughput-oriented (SLO ignored) when no
// feasible plan exists.
ScheduleDecision plan(const std::vector<PhaseRequest>& requests, int n,
                      double load, const LatencyModel& m,
                      double default_slo);

double consume_cache_load(const std::vector<RequestShape>& reqs, int n,
                          const HardwareProfile& p, const LatencyModel& m);

}  // namespace tokenpool
