#include "tokenpool/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace tokenpool {

std::vector<PhaseRequest> chunk_prefill(std::vector<PhaseRequest> requests,
                                        long chunk_size) {
  if (chunk_size < 1) throw std::invalid_argument("chunk_prefill: chunk >= 1");
  for (auto& r : requests) {
    if (r.phase == Phase::kPrefill && r.input_len > chunk_size) {
      r.input_len = chunk_size;
    }
  }
  return requests;
}

double consume_cache_load(const std::vector<RequestShape>& reqs, int n,
                          const HardwareProfile& p, const LatencyModel& m) {
  if (reqs.empty()) return 0;
  return cache_load(reqs, n, p, ideal_time(reqs, n, p, m));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double request_slo(const PhaseRequest& r, double default_slo) {
  return r.slo_tbt > 0 ? r.slo_tbt : default_slo;
}

struct DecodePlan {
  std::vector<PlannedBatch> batches;
  double objective = 0;
  bool feasible = true;
};

// Longest-first balanced fill into nd DoP-1 batches; nd grows until every
// batch meets its strictest member SLO or the instance budget runs out.
DecodePlan pack_decode(const std::vector<PhaseRequest>& decode, int max_nd,
                       double load, const LatencyModel& m, double default_slo,
                       bool use_slo) {
  DecodePlan plan;
  if (decode.empty()) return plan;
  std::vector<const PhaseRequest*> sorted;
  for (const auto& r : decode) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const PhaseRequest* a, const PhaseRequest* b) {
                     if (a->context_len != b->context_len)
                       return a->context_len > b->context_len;
                     return a->request_id < b->request_id;
                   });
  max_nd = std::min<int>(max_nd, static_cast<int>(decode.size()));
  max_nd = std::max(max_nd, 1);
  for (int nd = 1; nd <= max_nd; ++nd) {
    std::vector<std::vector<const PhaseRequest*>> bins(nd);
    std::vector<long> totals(nd, 0);
    for (const auto* r : sorted) {
      int best = 0;
      for (int b = 1; b < nd; ++b) {
        if (totals[b] < totals[best]) best = b;
      }
      bins[best].push_back(r);
      totals[best] += r->context_len;
    }
    DecodePlan cand;
    cand.feasible = true;
    for (int b = 0; b < nd; ++b) {
      if (bins[b].empty()) continue;
      std::vector<RequestShape> shapes;
      double slo = kInf;
      PlannedBatch pb;
      pb.phase = Phase::kDecode;
      pb.dop = 1;
      for (const auto* r : bins[b]) {
        shapes.push_back({static_cast<double>(r->context_len), 1.0});
        slo = std::min(slo, request_slo(*r, default_slo));
        pb.request_ids.push_back(r->request_id);
      }
      pb.est_latency = estimate_batch_latency(shapes, 1, load, m);
      if (use_slo && pb.est_latency > slo) cand.feasible = false;
      cand.objective += static_cast<double>(bins[b].size()) * pb.est_latency;
      cand.batches.push_back(std::move(pb));
    }
    plan = std::move(cand);
    if (!use_slo || plan.feasible) break;
  }
  return plan;
}

struct PrefillDp {
  std::vector<PlannedBatch> batches;
  double objective = 0;
  bool feasible = true;  // a finite plan existed under the SLO
};

PrefillDp run_prefill_dp(const std::vector<const PhaseRequest*>& sorted, int n,
                         double load, const LatencyModel& m,
                         double default_slo, bool use_slo) {
  PrefillDp result;
  const int mreq = static_cast<int>(sorted.size());
  if (mreq == 0 || n == 0) {
    result.feasible = mreq == 0;
    return result;
  }
  // Pairwise batch terms, accumulated left to right exactly as
  // estimate_batch_latency would over the slice.
  std::vector<std::vector<double>> quad(mreq + 1, std::vector<double>(mreq + 1, 0));
  std::vector<std::vector<double>> lin(mreq + 1, std::vector<double>(mreq + 1, 0));
  std::vector<std::vector<double>> slo_min(mreq + 1,
                                           std::vector<double>(mreq + 1, kInf));
  for (int j = 0; j < mreq; ++j) {
    double q = 0, l = 0, s = kInf;
    for (int i = j + 1; i <= mreq; ++i) {
      const PhaseRequest& r = *sorted[i - 1];
      const double prefix = static_cast<double>(r.context_len - r.input_len);
      const double input = static_cast<double>(r.input_len);
      q += (prefix + input) * input;
      l += input;
      s = std::min(s, request_slo(r, default_slo));
      quad[j][i] = q;
      lin[j][i] = l;
      slo_min[j][i] = s;
    }
  }
  auto batch_time = [&](int j, int i, int dop) {
    const double t = m.quad_coef * quad[j][i] + m.linear_coef * lin[j][i] +
                     m.fixed_cost;
    return t / (static_cast<double>(dop) * (1.0 - load));
  };

  // f[i][k]: minimum overall latency for the first i sorted requests using
  // exactly k instances; ties prefer fewer batches, then smaller total DoP.
  struct State {
    double cost = kInf;
    int nbatches = 0;
    int from_j = -1, from_l = -1;
  };
  std::vector<std::vector<State>> f(mreq + 1, std::vector<State>(n + 1));
  f[0][0].cost = 0;
  for (int i = 1; i <= mreq; ++i) {
    for (int k = 1; k <= n; ++k) {
      for (int j = 0; j < i; ++j) {
        for (int l = 0; l < k; ++l) {
          if (f[j][l].cost == kInf) continue;
          const int dop = k - l;
          const double t = batch_time(j, i, dop);
          if (use_slo && t > slo_min[j][i]) continue;
          const double cand = f[j][l].cost + static_cast<double>(i - j) * t;
          State& cur = f[i][k];
          const int nb = f[j][l].nbatches + 1;
          const bool better =
              cand < cur.cost ||
              (cand == cur.cost &&
               (nb < cur.nbatches ||
                (nb == cur.nbatches && j < cur.from_j)));
          if (better) {
            cur.cost = cand;
            cur.nbatches = nb;
            cur.from_j = j;
            cur.from_l = l;
          }
        }
      }
    }
  }
  int best_k = -1;
  for (int k = 1; k <= n; ++k) {
    if (f[mreq][k].cost == kInf) continue;
    if (best_k < 0 || f[mreq][k].cost < f[mreq][best_k].cost ||
        (f[mreq][k].cost == f[mreq][best_k].cost && k < best_k)) {
      best_k = k;
    }
  }
  if (best_k < 0) {
    result.feasible = false;
    return result;
  }
  result.objective = f[mreq][best_k].cost;
  int i = mreq, k = best_k;
  while (i > 0) {
    const State& st = f[i][k];
    PlannedBatch pb;
    pb.phase = Phase::kPrefill;
    pb.dop = k - st.from_l;
    for (int r = st.from_j; r < i; ++r) {
      pb.request_ids.push_back(sorted[r]->request_id);
    }
    pb.est_latency = batch_time(st.from_j, i, pb.dop);
    result.batches.push_back(std::move(pb));
    i = st.from_j;
    k = st.from_l;
  }
  std::reverse(result.batches.begin(), result.batches.end());
  return result;
}

}  // namespace

ScheduleDecision plan(const std::vector<PhaseRequest>& requests, int n,
                      double load, const LatencyModel& m,
                      double default_slo) {
  if (n < 1) throw std::invalid_argument("plan: n >= 1");
  if (!(load >= 0) || load >= 1) {
    throw std::invalid_argument("plan: L must be in [0,1)");
  }
  std::vector<PhaseRequest> decode;
  std::vector<const PhaseRequest*> prefill;
  for (const auto& r : requests) {
    if (r.phase == Phase::kDecode) {
      decode.push_back(r);
    } else {
      prefill.push_back(&r);
    }
  }
  std::stable_sort(prefill.begin(), prefill.end(),
                   [](const PhaseRequest* a, const PhaseRequest* b) {
                     if (a->context_len != b->context_len)
                       return a->context_len < b->context_len;
                     return a->request_id < b->request_id;
                   });
  const int max_nd = prefill.empty() ? n : std::max(0, n - 1);

  for (int attempt = 0; attempt < 2; ++attempt) {
    const bool use_slo = attempt == 0;
    DecodePlan dp_decode =
        pack_decode(decode, std::max(max_nd, decode.empty() ? 0 : 1), load, m,
                    default_slo, use_slo);
    const int n_prefill =
        n - static_cast<int>(dp_decode.batches.size());
    PrefillDp dp_prefill;  // no free instance: prefill waits this iteration
    if (!prefill.empty() && n_prefill >= 1) {
      dp_prefill = run_prefill_dp(prefill, n_prefill, load, m, default_slo,
                                  use_slo);
    }
    const bool decode_ok = decode.empty() || dp_decode.feasible;
    if ((decode_ok && dp_prefill.feasible) || attempt == 1) {
      ScheduleDecision d;
      d.fallback_used = attempt == 1;
      d.batches = std::move(dp_decode.batches);
      for (auto& b : dp_prefill.batches) d.batches.push_back(std::move(b));
      d.objective = dp_decode.objective + dp_prefill.objective;
      return d;
    }
  }
  throw std::logic_error("plan: unreachable");
}

}  // namespace tokenpool
