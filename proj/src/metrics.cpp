#include "tokenpool/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <stdexcept>

namespace tokenpool {

double hit_rate(const MetricsReport& r) {
  if (!(r.cacheable_tokens > 0)) {
    throw std::invalid_argument("hit_rate: zero cacheable tokens");
  }
  return r.hit_tokens / r.cacheable_tokens;
}

CvResult access_cv(const MetricsReport& r) {
  if (r.n_instances < 2) {
    throw std::invalid_argument("access_cv: needs >= 2 instances");
  }
  CvResult result;
  double sum = 0;
  long counted = 0;
  for (const auto& window : r.access_windows) {
    double mean = 0;
    for (double c : window) mean += c;
    mean /= static_cast<double>(r.n_instances);
    double cv = 0;
    if (mean > 0) {
      double var = 0;
      for (double c : window) var += (c - mean) * (c - mean);
      var /= static_cast<double>(r.n_instances);
      cv = std::sqrt(var) / mean;
      sum += cv;
      ++counted;
    }
    result.per_window.push_back(cv);
  }
  result.mean = counted > 0 ? sum / static_cast<double>(counted) : 0;
  return result;
}

double slo_attainment(const MetricsReport& r, double slo_multiplier) {
  if (r.requests.empty()) {
    throw std::invalid_argument("slo_attainment: empty report");
  }
  long met = 0;
  for (const auto& q : r.requests) {
    if (q.dropped) continue;
    bool ok = q.ttft <= slo_multiplier * q.ref_ttft;
    for (double t : q.tbt) {
      if (t > slo_multiplier * q.ref_tbt) {
        ok = false;
        break;
      }
    }
    if (ok) ++met;
  }
  return static_cast<double>(met) / static_cast<double>(r.requests.size());
}

double p90_goodput(const std::function<double(double)>& attainment_at_rate,
                   const std::vector<double>& rates) {
  if (rates.empty()) throw std::invalid_argument("p90_goodput: empty rates");
  // Attainment is non-increasing in rate, so bisect for the boundary.
  long lo = 0, hi = static_cast<long>(rates.size()) - 1;
  double best = 0;
  if (attainment_at_rate(rates[0]) < 0.9) return 0;
  while (lo <= hi) {
    const long mid = (lo + hi) / 2;
    if (attainment_at_rate(rates[mid]) >= 0.9) {
      best = rates[mid];
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return best;
}

void write_csv(const MetricsReport& r, std::ostream& out) {
  out << "metric,scope,window_start,value\n";
  out << std::setprecision(17);
  auto row = [&](const std::string& metric, const std::string& scope,
                 const std::string& window, double value) {
    out << metric << "," << scope << "," << window << "," << value << "\n";
  };
  row("hit_tokens", "total", "", r.hit_tokens);
  row("cacheable_tokens", "total", "", r.cacheable_tokens);
  if (r.cacheable_tokens > 0) row("hit_rate", "total", "", hit_rate(r));
  if (r.n_instances >= 2 && !r.access_windows.empty()) {
    row("mean_access_cv", "total", "", access_cv(r).mean);
  }
  if (!r.requests.empty()) {
    row("slo_attainment", "total", "", slo_attainment(r));
  }
  row("comm_bytes", "total", "", r.comm_bytes);
  row("recompute_tokens", "total", "", r.recompute_tokens);
  row("drops", "total", "", static_cast<double>(r.drops));
  row("replications", "total", "", static_cast<double>(r.replications));
  row("evictions", "total", "", static_cast<double>(r.evictions));
  row("iterations", "total", "", static_cast<double>(r.iterations));
  row("sim_seconds", "total", "", r.sim_seconds);
  for (std::size_t w = 0; w < r.access_windows.size(); ++w) {
    const std::string start = std::to_string(w * r.cv_window);
    for (int i = 0; i < r.n_instances; ++i) {
      row("access_count", "instance_" + std::to_string(i), start,
          r.access_windows[w][i]);
    }
  }
  for (const auto& q : r.requests) {
    const std::string scope = "request_" + std::to_string(q.request_id);
    if (q.dropped) {
      row("dropped", scope, "", 1);
      continue;
    }
    row("ttft", scope, "", q.ttft);
    if (q.input_len > 0) {
      row("input_token_latency", scope, "",
          q.ttft / static_cast<double>(q.input_len));
    }
    double tbt_sum = 0, tbt_max = 0;
    for (double t : q.tbt) {
      tbt_sum += t;
      tbt_max = std::max(tbt_max, t);
    }
    if (!q.tbt.empty()) {
      row("tbt_mean", scope, "", tbt_sum / static_cast<double>(q.tbt.size()));
      row("tbt_max", scope, "", tbt_max);
    }
  }
}

void write_summary(const MetricsReport& r, std::ostream& out) {
  out << std::setprecision(6);
  out << "iterations: " << r.iterations << "\n";
  out << "sim_seconds: " << r.sim_seconds << "\n";
  out << "requests: " << r.requests.size() << "\n";
  out << "drops: " << r.drops << "\n";
  if (r.cacheable_tokens > 0) {
    out << "hit_rate: " << hit_rate(r) << "\n";
  }
  if (r.n_instances >= 2 && !r.access_windows.empty()) {
    out << "mean_access_cv: " << access_cv(r).mean << "\n";
  }
  if (!r.requests.empty()) {
    out << "slo_attainment: " << slo_attainment(r) << "\n";
  }
  out << "comm_bytes: " << r.comm_bytes << "\n";
  out << "recompute_tokens: " << r.recompute_tokens << "\n";
  out << "replications: " << r.replications << "\n";
  out << "evictions: " << r.evictions << "\n";
}

}  // namespace tokenpool
