#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace tokenpool {

struct RequestMetrics {
  long request_id = 0;
  double arrival = 0;
  double ttft = 0;               // s, first-token latency
  long input_len = 0;            // total input tokens (for normalization)
  std::vector<double> tbt;       // per-output-token latencies, s
  bool dropped = false;
  double ref_ttft = 0;           // batch-size-1 reference prefill time
  double ref_tbt = 0;            // batch-size-1 reference decode step time
};

struct MetricsReport {
  int n_instances = 0;
  double cv_window = 10.0;  // simulated seconds per CV window
  std::vector<RequestMetrics> requests;
  // access_windows[w][i]: cache accesses on instance i during window w
  std::vector<std::vector<double>> access_windows;
  double hit_tokens = 0;
  double cacheable_tokens = 0;
  double comm_bytes = 0;
  double recompute_tokens = 0;
  long drops = 0;
  long replications = 0;
  long evictions = 0;
  long max_heavy_keys_per_rebalance = 0;
  double sim_seconds = 0;
  long iterations = 0;
};

// hit tokens / cacheable tokens; throws when nothing was cacheable.
double hit_rate(const MetricsReport& r);

// Per-window coefficient of variation of per-instance access counts
// (population stddev / mean; 0 for empty windows), plus the mean over
// non-empty windows.
struct CvResult {
  std::vector<double> per_window;
  double mean = 0;
};
CvResult access_cv(const MetricsReport& r);

// Fraction of requests whose every input-token and output-token latency is
// under slo_multiplier times the batch-size-1 reference. Dropped requests
// never meet the SLO.
double slo_attainment(const MetricsReport& r, double slo_multiplier = 10.0);

// Largest rate in the ascending list whose attainment is >= 0.9, found by
// bisection; 0 if none qualifies.
double p90_goodput(const std::function<double(double)>& attainment_at_rate,
                   const std::vector<double>& rates);

// CSV with fixed columns: metric,scope,window_start,value.
void write_csv(const MetricsReport& r, std::ostream& out);
void write_summary(const MetricsReport& r, std::ostream& out);

}  // namespace tokenpool
