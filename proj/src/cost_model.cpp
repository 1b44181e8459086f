#include "tokenpool/cost_model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace tokenpool {

void HardwareProfile::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v > 0)) {
      throw std::invalid_argument(std::string("HardwareProfile: ") + name +
                                  " must be > 0");
    }
  };
  check(hidden_dim, "hidden_dim");
  check(layers, "layers");
  check(flops, "flops");
  check(mem_bw, "mem_bw");
  check(net_bw, "net_bw");
  check(net_latency, "net_latency");
  check(bytes_per_elem, "bytes_per_elem");
}

// Per-token KV footprint in bytes: K and V rows of d elements each.
static double kv_bytes_per_token(const HardwareProfile& p) {
  return 2.0 * p.hidden_dim * p.bytes_per_elem;
}

double k_comp(const HardwareProfile& p) {
  const double compute = 4.0 * p.hidden_dim / p.flops;
  const double memory = kv_bytes_per_token(p) / p.mem_bw;
  return std::max(compute, memory);
}

double comm_time(const HardwareProfile& p) {
  return 2.0 * p.net_latency + kv_bytes_per_token(p) / p.net_bw;
}

double min_segment_size(const HardwareProfile& p) {
  return comm_time(p) / k_comp(p);
}

long default_segment_size(const HardwareProfile& p) {
  const double c = min_segment_size(p);
  long size = static_cast<long>(std::ceil(c / 64.0)) * 64;
  return std::max<long>(size, 64);
}

double query_comm_volume(const HardwareProfile& p, double l, double n_remote) {
  return 2.0 * p.hidden_dim * p.bytes_per_elem * l * n_remote;
}

double kv_put_volume(const HardwareProfile& p, double new_tokens) {
  return kv_bytes_per_token(p) * new_tokens;
}

double ideal_time(const std::vector<RequestShape>& reqs, int n,
                  const HardwareProfile& p, const LatencyModel& m) {
  p.validate();
  if (n < 1) throw std::invalid_argument("ideal_time: n must be >= 1");
  if (reqs.empty()) return 0;
  return estimate_batch_latency(reqs, 1, 0.0, m) / static_cast<double>(n);
}

double cache_load(const std::vector<RequestShape>& reqs, int n,
                  const HardwareProfile& p, double t_ideal) {
  p.validate();
  if (reqs.empty()) return 0;
  if (!(t_ideal > 0)) {
    throw std::invalid_argument("cache_load: t_ideal must be > 0");
  }
  double mem = 0;  // bytes
  double flop = 0;
  for (const auto& r : reqs) {
    mem += kv_bytes_per_token(p) * (r.prefix_len + r.input_len);
    flop += 2.0 * p.hidden_dim * r.prefix_len * r.input_len;
  }
  const double nn = static_cast<double>(n);
  const double l_mem = mem / (mem + nn * p.mem_bw * t_ideal);
  const double l_flop = flop / (flop + nn * p.flops * t_ideal);
  return std::max(l_mem, l_flop);
}

double estimate_batch_latency(const std::vector<RequestShape>& reqs, int dop,
                              double load, const LatencyModel& m) {
  if (dop < 1) throw std::invalid_argument("estimate_batch_latency: dop >= 1");
  if (!(load >= 0) || load >= 1) {
    throw std::invalid_argument("estimate_batch_latency: L must be in [0,1)");
  }
  double quad = 0, lin = 0;
  for (const auto& r : reqs) {
    quad += (r.prefix_len + r.input_len) * r.input_len;
    lin += r.input_len;
  }
  const double t = m.quad_coef * quad + m.linear_coef * lin + m.fixed_cost;
  return t / (static_cast<double>(dop) * (1.0 - load));
}

double roofline_batch_time(const HardwareProfile& p,
                           const std::vector<RequestShape>& reqs) {
  // Attention FLOPs of 4d per (query, context) token pair, KV reads
  // amortized over query blocks of 128, plus per-token KV write traffic
  // and a fixed scheduling overhead.
  constexpr double kQueryBlock = 128.0;
  constexpr double kFixedOverhead = 2e-4;
  double t = kFixedOverhead;
  for (const auto& r : reqs) {
    const double pairs = (r.prefix_len + r.input_len) * r.input_len;
    t += 4.0 * p.hidden_dim * p.layers * pairs / p.flops;
    t += kv_bytes_per_token(p) * p.layers * pairs / (kQueryBlock * p.mem_bw);
    t += kv_bytes_per_token(p) * p.layers * r.input_len / p.mem_bw;
  }
  return t;
}

LatencyModel fit_latency_model(const std::vector<RequestShape>& shapes,
                               const std::vector<double>& seconds) {
  if (shapes.size() != seconds.size() || shapes.size() < 3) {
    throw std::invalid_argument("fit_latency_model: need >= 3 matched points");
  }
  // Normal equations for t ~ a*x + b*y + c with x = (p+i)*i, y = i.
  double s[3][4] = {};
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const double x = (shapes[k].prefix_len + shapes[k].input_len) *
                     shapes[k].input_len;
    const double y = shapes[k].input_len;
    const double f[3] = {x, y, 1.0};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) s[i][j] += f[i] * f[j];
      s[i][3] += f[i] * seconds[k];
    }
  }
  // Gaussian elimination with partial pivoting on the 3x4 system.
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(s[r][col]) > std::abs(s[pivot][col])) pivot = r;
    }
    std::swap(s[col], s[pivot]);
    if (s[col][col] == 0) {
      throw std::invalid_argument("fit_latency_model: degenerate sample set");
    }
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = s[r][col] / s[col][col];
      for (int c = col; c < 4; ++c) s[r][c] -= f * s[col][c];
    }
  }
  LatencyModel m;
  m.quad_coef = std::max(0.0, s[0][3] / s[0][0]);
  m.linear_coef = std::max(0.0, s[1][3] / s[1][1]);
  m.fixed_cost = std::max(0.0, s[2][3] / s[2][2]);
  m.calibration = "least-squares";
  return m;
}

LatencyModel calibrate(const HardwareProfile& p) {
  p.validate();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> prefix(0, 32768);
  std::uniform_real_distribution<double> input(1, 4096);
  std::vector<RequestShape> shapes;
  std::vector<double> seconds;
  for (int i = 0; i < 50; ++i) {
    RequestShape r{std::floor(prefix(rng)), std::floor(input(rng))};
    shapes.push_back(r);
    seconds.push_back(roofline_batch_time(p, {r}));
  }
  LatencyModel m = fit_latency_model(shapes, seconds);
  m.calibration = "roofline-synthetic";
  return m;
}

}  // namespace tokenpool
