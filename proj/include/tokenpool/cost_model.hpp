#pragma once

#include <string>
#include <vector>

namespace tokenpool {

// Hardware parameters feeding every analytical formula. The "4d" terms of
// the roofline and communication formulas are interpreted as bytes under
// the 2-byte-per-element convention: per-token KV is 2*d elements
// (K and V), i.e. 4d bytes at bytes_per_elem = 2.
struct HardwareProfile {
  double hidden_dim = 4096;        // d, elements
  double layers = 32;              // transformer layer count
  double flops = 312e12;           // F, FLOP/s per instance
  double mem_bw = 2.039e12;        // B_mem, bytes/s
  double net_bw = 400e9;           // B_net, bytes/s
  double net_latency = 2.3e-6;     // alpha_net, seconds
  double bytes_per_elem = 2;

  void validate() const;  // throws std::invalid_argument on non-positive fields
};

// Quadratic batch-latency model: T = a * sum((prefix+input)*input)
//                                  + b * sum(input) + c, deflated by DoP
// and inflated by 1/(1-L).
struct LatencyModel {
  double quad_coef = 0;    // a, s per token^2 of attention work
  double linear_coef = 0;  // b, s per token
  double fixed_cost = 0;   // c, s
  std::string calibration = "uncalibrated";
};

struct RequestShape {
  double prefix_len = 0;  // tokens already cached
  double input_len = 0;   // tokens processed this iteration (1 for decode)
};

// k_comp = max(4d/F, 4d/B_mem): seconds saved per remote cache token.
double k_comp(const HardwareProfile& p);

// T_comm = 2*alpha_net + 4d/B_net: round-trip for one remote segment query.
double comm_time(const HardwareProfile& p);

// Segment-size threshold C >= 2*alpha_net/k_comp + 4d/(k_comp*B_net),
// real-valued; callers round up to the configured granularity.
double min_segment_size(const HardwareProfile& p);

// Smallest multiple of 64 at or above min_segment_size.
long default_segment_size(const HardwareProfile& p);

// Query scatter/gather volume 2*d*l*n_remote elements, in bytes.
double query_comm_volume(const HardwareProfile& p, double l, double n_remote);

// KV bytes per layer written for new_tokens freshly generated tokens.
double kv_put_volume(const HardwareProfile& p, double new_tokens);

// Minimum execution time of reqs with all n instances fully utilized;
// denominator input for cache_load.
double ideal_time(const std::vector<RequestShape>& reqs, int n,
                  const HardwareProfile& p, const LatencyModel& m);

// L = max(M_r/(M_r + N*B_mem*T_r), F_r/(F_r + N*F*T_r)) with
// M_r = sum 4d*(prefix+input) bytes and F_r = sum 2d*prefix*input FLOPs.
double cache_load(const std::vector<RequestShape>& reqs, int n,
                  const HardwareProfile& p, double t_ideal);

double estimate_batch_latency(const std::vector<RequestShape>& reqs, int dop,
                              double load, const LatencyModel& m);

// Synthetic roofline timing used as the calibration source when no measured
// points are supplied.
double roofline_batch_time(const HardwareProfile& p,
                           const std::vector<RequestShape>& reqs);

// Least-squares fit of (a, b, c) against roofline_batch_time samples.
LatencyModel calibrate(const HardwareProfile& p);

// Fit against externally measured (shape, seconds) points.
LatencyModel fit_latency_model(const std::vector<RequestShape>& shapes,
                               const std::vector<double>& seconds);

}  // namespace tokenpool
