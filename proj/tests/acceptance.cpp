// Acceptance gate: one self-contained check per release criterion, one
// pass/fail line each. Usage: acceptance <cli-binary> <source-dir>.
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tokenpool/attention.hpp"
#include "tokenpool/config.hpp"
#include "tokenpool/cost_model.hpp"
#include "tokenpool/dispatcher.hpp"
#include "tokenpool/metrics.hpp"
#include "tokenpool/prefix_pool.hpp"
#include "tokenpool/scheduler.hpp"
#include "tokenpool/sim.hpp"
#include "tokenpool/workload.hpp"

namespace fs = std::filesystem;
using namespace tokenpool;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Pinned tolerances and thresholds.
constexpr double kSegmentThresholdLo = 560.0;   // tokens
constexpr double kSegmentThresholdHi = 585.0;   // tokens
constexpr double kCommTimeLo = 4.55e-6;         // s
constexpr double kCommTimeHi = 4.75e-6;         // s
constexpr double kPutVolumeOneToken = 16384.0;  // bytes
constexpr double kMergeRelTol = 1e-6;
constexpr double kAssociativityTol = 1e-10;
constexpr double kPooledCvCeiling = 0.20;
constexpr double kCvRatioCeiling = 0.5;    // pooled CV vs router CV
constexpr double kHitRatioFloor = 1.5;     // pooled hit rate vs baselines
constexpr double kCapacityFraction = 0.25; // of the unique-segment footprint

int g_failures = 0;

void report(int id, const std::string& name, bool ok,
            const std::string& detail) {
  std::cout << "criterion " << id << " (" << name << "): "
            << (ok ? "PASS" : "FAIL") << " [" << detail << "]\n";
  if (!ok) ++g_failures;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// --- matching oracle --------------------------------------------------------

BatchNode random_node(std::mt19937_64& rng, int n_instances) {
  BatchNode node;
  std::uniform_int_distribution<int> inst(0, n_instances - 1);
  std::uniform_int_distribution<int> count(1, 4);
  const int nq = static_cast<int>(rng() % (n_instances + 1));
  for (int i = 0; i < nq; ++i) node.query_set.insert(inst(rng));
  const int np = static_cast<int>(rng() % 3);
  for (int i = 0; i < np; ++i) node.put_map[inst(rng)] += count(rng);
  return node;
}

double brute_force_assign(const std::vector<BatchNode>& nodes, int n,
                          const HardwareProfile& p) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double total = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      total += -edge_weight(nodes[i], perm[i], p);
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// --- scheduler oracle -------------------------------------------------------

struct EnumResult {
  double objective = kInf;
  bool feasible = false;
};

double slice_time(const std::vector<const PhaseRequest*>& sorted, int j, int i,
                  int dop, double load, const LatencyModel& m,
                  double* slo_min) {
  double q = 0, l = 0, s = kInf;
  for (int r = j; r < i; ++r) {
    const double prefix =
        static_cast<double>(sorted[r]->context_len - sorted[r]->input_len);
    const double input = static_cast<double>(sorted[r]->input_len);
    q += (prefix + input) * input;
    l += input;
    s = std::min(s, sorted[r]->slo_tbt);
  }
  if (slo_min) *slo_min = s;
  const double t = m.quad_coef * q + m.linear_coef * l + m.fixed_cost;
  return t / (static_cast<double>(dop) * (1.0 - load));
}

void enumerate(const std::vector<const PhaseRequest*>& sorted, int i, int used,
               int n, double acc, double load, const LatencyModel& m,
               bool use_slo, EnumResult* out) {
  const int mreq = static_cast<int>(sorted.size());
  if (i == mreq) {
    out->feasible = true;
    out->objective = std::min(out->objective, acc);
    return;
  }
  for (int next = i + 1; next <= mreq; ++next) {
    for (int dop = 1; used + dop <= n; ++dop) {
      double slo = kInf;
      const double t = slice_time(sorted, i, next, dop, load, m, &slo);
      if (use_slo && t > slo) continue;
      enumerate(sorted, next, used + dop, n, acc + (next - i) * t, load, m,
                use_slo, out);
    }
  }
}

// --- attention oracle -------------------------------------------------------

std::vector<double> dense_attention(const std::vector<double>& q,
                                    const Matrix& k, const Matrix& v) {
  const std::size_t d = q.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> logits(k.size());
  double mx = -1e300;
  for (std::size_t i = 0; i < k.size(); ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) dot += q[j] * k[i][j];
    logits[i] = dot * scale;
    mx = std::max(mx, logits[i]);
  }
  double z = 0;
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double w = std::exp(logits[i] - mx);
    z += w;
    for (std::size_t j = 0; j < d; ++j) out[j] += w * v[i][j];
  }
  for (double& o : out) o /= z;
  return out;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                     double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (double& x : row) x = g(rng);
  return m;
}

// --- heavy-hitter oracle ----------------------------------------------------

std::vector<SegmentKey> heavy_oracle(const PrefixPool& p, std::size_t budget) {
  std::vector<std::pair<std::uint64_t, SegmentKey>> all;
  std::vector<SegmentKey> stack(p.root_children().begin(),
                                p.root_children().end());
  while (!stack.empty()) {
    const SegmentKey k = stack.back();
    stack.pop_back();
    const Segment* s = p.find(k);
    if (s->token_count == p.segment_size()) all.push_back({s->access_count, k});
    for (SegmentKey c : p.children(k)) stack.push_back(c);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<SegmentKey> out;
  for (std::size_t i = 0; i < std::min(budget, all.size()); ++i) {
    out.push_back(all[i].second);
  }
  return out;
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n,
                                   TokenId vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng() % vocab);
  return t;
}

// --- shared workloads -------------------------------------------------------

std::vector<TraceRecord> skewed_trace() {
  TraceSpec spec;
  spec.preset = Preset::kLoogleLike;
  spec.rate_lambda = 40.0;
  spec.duration = 60.0;
  spec.doc_len_mean = 4096;
  spec.input_len_mean = 1024;
  spec.output_len_mean = 64;
  spec.seed = 9;
  return generate(spec);
}

SimConfig skewed_config() {
  SimConfig cfg;
  cfg.n_instances = 8;
  cfg.chunk_size = 4096;
  cfg.slot_capacity = 1 << 20;  // effectively unbounded
  cfg.doc_len_mean = 4096;
  cfg.check_invariants = false;
  return cfg;
}

std::vector<TraceRecord> mixed_trace() {
  TraceSpec sg;
  sg.preset = Preset::kSharegptLike;
  sg.rate_lambda = 50.0;
  sg.duration = 100.0;
  sg.output_len_mean = 64;
  sg.seed = 1;
  TraceSpec lg;
  lg.preset = Preset::kLoogleLike;
  lg.rate_lambda = 30.0;
  lg.duration = 100.0;
  lg.doc_len_mean = 4096;
  lg.input_len_mean = 1024;
  lg.output_len_mean = 64;
  lg.seed = 2;
  TraceSpec sc;
  sc.preset = Preset::kScbenchLike;
  sc.rate_lambda = 5.0;
  sc.duration = 100.0;
  sc.scbench_turn_input_mean = 1024;
  sc.turns_mean = 4;
  sc.output_len_mean = 64;
  sc.seed = 3;

  std::vector<TraceRecord> merged;
  long session_base = 0;
  for (const TraceSpec& spec : {sg, lg, sc}) {
    long max_session = 0;
    for (TraceRecord r : generate(spec)) {
      max_session = std::max(max_session, r.session_id);
      r.session_id += session_base;
      merged.push_back(r);
    }
    session_base += max_session + 1;
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     return a.arrival_time < b.arrival_time;
                   });
  for (std::size_t i = 0; i < merged.size(); ++i) {
    merged[i].request_id = static_cast<long>(i);
  }
  return merged;
}

// --- criteria ---------------------------------------------------------------

void criterion_1_2(const HardwareProfile& prof) {
  const double thr = min_segment_size(prof);
  report(1, "segment-size threshold anchor",
         thr >= kSegmentThresholdLo && thr <= kSegmentThresholdHi,
         "threshold " + fmt(thr) + " tokens, bounds [" +
             fmt(kSegmentThresholdLo) + ", " + fmt(kSegmentThresholdHi) + "]");
  const double ct = comm_time(prof);
  const double put1 = kv_put_volume(prof, 1);
  report(2, "communication anchors",
         ct >= kCommTimeLo && ct <= kCommTimeHi && put1 == kPutVolumeOneToken,
         "comm_time " + fmt(ct * 1e6) + " us, 1-token put " + fmt(put1) +
             " bytes");
}

void criterion_3() {
  std::mt19937_64 rng(101);
  HardwareProfile p;
  int exact = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const int n = 2 + static_cast<int>(rng() % 5);  // 2..6
    const int m = 1 + static_cast<int>(rng() % n);
    std::vector<BatchNode> nodes;
    for (int i = 0; i < m; ++i) nodes.push_back(random_node(rng, n));
    if (assign(nodes, n, p).total_volume == brute_force_assign(nodes, n, p)) {
      ++exact;
    }
  }
  report(3, "dispatch matching vs permutation oracle", exact == trials,
         fmt(exact) + "/" + fmt(trials) + " exact-total-volume matches");
}

void criterion_4() {
  std::mt19937_64 rng(2024);
  LatencyModel m{3e-9, 1e-6, 5e-4};
  std::uniform_int_distribution<long> ctx(64, 8192);
  std::uniform_real_distribution<double> load_d(0.0, 0.7);
  const int trials = 200;
  int exact = 0, fallbacks = 0;
  for (int t = 0; t < trials; ++t) {
    const int mreq = 1 + static_cast<int>(rng() % 5);
    const int n = 1 + static_cast<int>(rng() % 4);
    const double load = load_d(rng);
    std::vector<PhaseRequest> reqs;
    for (int i = 0; i < mreq; ++i) {
      PhaseRequest r;
      r.request_id = i;
      r.phase = Phase::kPrefill;
      r.context_len = ctx(rng);
      r.input_len = std::min<long>(r.context_len, 512);
      r.slo_tbt = (rng() % 3 == 0) ? 1e-4 : 1e-1;
      reqs.push_back(r);
    }
    std::vector<const PhaseRequest*> sorted;
    for (const auto& r : reqs) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const PhaseRequest* a, const PhaseRequest* b) {
                       if (a->context_len != b->context_len)
                         return a->context_len < b->context_len;
                       return a->request_id < b->request_id;
                     });
    EnumResult with_slo, without;
    enumerate(sorted, 0, 0, n, 0.0, load, m, true, &with_slo);
    enumerate(sorted, 0, 0, n, 0.0, load, m, false, &without);
    const auto decision = plan(reqs, n, load, m, kInf);
    const bool ok =
        decision.fallback_used == !with_slo.feasible &&
        decision.objective ==
            (with_slo.feasible ? with_slo.objective : without.objective);
    if (ok) ++exact;
    if (decision.fallback_used) ++fallbacks;
  }
  report(4, "batch DP vs exhaustive enumeration",
         exact == trials && fallbacks > 0,
         fmt(exact) + "/" + fmt(trials) + " exact objectives, " +
             fmt(fallbacks) + " fallback cases exercised");
}

void criterion_5() {
  std::mt19937_64 rng(7);
  const int trials = 1000;
  int ok_cases = 0;
  double worst = 0, worst_assoc = 0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t d = 1 + rng() % 64;
    const std::size_t total = 1 + rng() % 256;
    const std::size_t n_seg = 1 + rng() % 8;
    std::vector<double> q(d);
    std::normal_distribution<double> g(0.0, 2.0);
    for (double& x : q) x = g(rng);
    const Matrix k = random_matrix(rng, total, d, 2.0);
    const Matrix v = random_matrix(rng, total, d, 2.0);
    // Split [0, total) into n_seg contiguous chunks and merge partials.
    std::vector<std::size_t> cuts = {0, total};
    for (std::size_t i = 1; i < n_seg; ++i) cuts.push_back(rng() % (total + 1));
    std::sort(cuts.begin(), cuts.end());
    AttentionPartial acc;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      if (cuts[i] == cuts[i + 1]) continue;
      const Matrix ks(k.begin() + cuts[i], k.begin() + cuts[i + 1]);
      const Matrix vs(v.begin() + cuts[i], v.begin() + cuts[i + 1]);
      acc = merge(acc, attend_segment(q, ks, vs));
    }
    const auto got = finalize(acc);
    const auto want = dense_attention(q, k, v);
    double rel = 0;
    for (std::size_t j = 0; j < d; ++j) {
      rel = std::max(rel, std::abs(got[j] - want[j]) /
                              std::max(1.0, std::abs(want[j])));
    }
    worst = std::max(worst, rel);
    // Associativity on a three-way split.
    const std::size_t c1 = total / 3, c2 = 2 * total / 3;
    if (c1 > 0 && c2 > c1 && total > c2) {
      const auto pa = attend_segment(q, Matrix(k.begin(), k.begin() + c1),
                                     Matrix(v.begin(), v.begin() + c1));
      const auto pb =
          attend_segment(q, Matrix(k.begin() + c1, k.begin() + c2),
                         Matrix(v.begin() + c1, v.begin() + c2));
      const auto pc = attend_segment(q, Matrix(k.begin() + c2, k.end()),
                                     Matrix(v.begin() + c2, v.end()));
      const auto left = finalize(merge(merge(pa, pb), pc));
      const auto right = finalize(merge(pa, merge(pb, pc)));
      for (std::size_t j = 0; j < d; ++j) {
        worst_assoc = std::max(worst_assoc, std::abs(left[j] - right[j]));
      }
    }
    if (rel <= kMergeRelTol) ++ok_cases;
  }
  report(5, "segment-merge attention vs dense oracle",
         ok_cases == trials && worst_assoc <= kAssociativityTol,
         "worst relative error " + fmt(worst) + " (tol " + fmt(kMergeRelTol) +
             "), worst associativity gap " + fmt(worst_assoc) + " (tol " +
             fmt(kAssociativityTol) + ")");
}

void criterion_6(const std::vector<TraceRecord>& trace) {
  SimConfig pooled = skewed_config();
  pooled.policy.kind = PolicyKind::kPooled;
  SimConfig router = skewed_config();
  router.policy.kind = PolicyKind::kCacheAwareRouter;
  const double cv_pooled = access_cv(run(pooled, trace)).mean;
  const double cv_router = access_cv(run(router, trace)).mean;
  const bool ok = cv_pooled < kPooledCvCeiling &&
                  cv_pooled <= kCvRatioCeiling * cv_router;
  report(6, "load-balance CV under skewed popularity", ok,
         "pooled CV " + fmt(cv_pooled) + " (< " + fmt(kPooledCvCeiling) +
             "), router CV " + fmt(cv_router) + ", " +
             fmt(trace.size()) + " requests");
}

void criterion_7() {
  // Document-dominated requests: most cacheable volume is shared, so the
  // policies differ by how much of it they can dedupe under tight capacity.
  TraceSpec spec;
  spec.preset = Preset::kLoogleLike;
  spec.rate_lambda = 40.0;
  spec.duration = 60.0;
  spec.doc_len_mean = 32768;
  spec.n_shared_docs = 128;
  spec.input_len_mean = 128;
  spec.output_len_mean = 64;
  spec.seed = 13;
  const auto trace = generate(spec);
  SimConfig base = skewed_config();
  base.doc_len_mean = spec.doc_len_mean;
  const long footprint = unique_segment_footprint(base, trace);
  base.slot_capacity = std::max<long>(
      1, static_cast<long>(kCapacityFraction * static_cast<double>(footprint)) /
             base.n_instances);
  SimConfig pooled = base;
  pooled.policy.kind = PolicyKind::kPooled;
  SimConfig router = base;
  router.policy.kind = PolicyKind::kCacheAwareRouter;
  SimConfig pd = base;
  pd.policy.kind = PolicyKind::kPdDisagg;
  pd.policy.prefill_instances = 2;
  pd.policy.decode_instances = 6;
  const double h_pooled = hit_rate(run(pooled, trace));
  const double h_router = hit_rate(run(router, trace));
  const double h_pd = hit_rate(run(pd, trace));
  const bool ok = h_pooled >= kHitRatioFloor * h_router &&
                  h_pooled >= kHitRatioFloor * h_pd;
  report(7, "hit rate at 25% footprint capacity", ok,
         "pooled " + fmt(h_pooled) + ", router " + fmt(h_router) + ", pd " +
             fmt(h_pd) + ", floor " + fmt(kHitRatioFloor) + "x, footprint " +
             fmt(footprint) + " segments");
}

// Returns the report of the mixed run so criterion 10 can reuse it.
MetricsReport criterion_8(const std::vector<TraceRecord>& trace) {
  SimConfig cfg = skewed_config();
  cfg.check_invariants = true;
  cfg.slot_capacity = 2048;  // tight enough to keep evicting
  Simulator sim(cfg, trace);
  while (!sim.done()) sim.step();
  const MetricsReport r = sim.report();
  const bool ok = sim.invariant_violations() == 0 &&
                  r.requests.size() == trace.size();
  report(8, "dedup and capacity invariants on a mixed run", ok,
         fmt(trace.size()) + " requests, " + fmt(r.iterations) +
             " steps, violations " + fmt(sim.invariant_violations()) +
             ", evictions " + fmt(r.evictions));
  return r;
}

void criterion_9(const std::string& cli, const fs::path& profile_path) {
  const fs::path dir = fs::temp_directory_path() / "tokenpool_acceptance";
  fs::create_directories(dir);
  TraceSpec spec;
  spec.preset = Preset::kLoogleLike;
  spec.rate_lambda = 5.0;
  spec.duration = 30.0;
  spec.doc_len_mean = 4096;
  spec.input_len_mean = 1024;
  spec.output_len_mean = 32;
  spec.seed = 77;
  const fs::path trace_path = dir / "trace.jsonl";
  save_trace(generate(spec), trace_path.string());

  ExperimentConfig cfg;
  cfg.profile = load_profile(profile_path.string());
  cfg.trace = spec;
  cfg.trace_path = trace_path.string();
  cfg.seed = 5;
  const fs::path conf = dir / "run.conf";
  {
    std::ofstream out(conf);
    serialize_config(cfg, out);
  }
  bool ok = true;
  std::string detail;
  std::vector<std::string> csv;
  for (const char* sub : {"a", "b"}) {
    const fs::path out_dir = dir / sub;
    fs::create_directories(out_dir);
    const std::string cmd = cli + " run --config " + conf.string() +
                            " --out " + out_dir.string() + " > /dev/null";
    if (std::system(cmd.c_str()) != 0) {
      ok = false;
      detail = "CLI run failed";
      break;
    }
    std::ifstream in(out_dir / "metrics.csv", std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    csv.push_back(buf.str());
  }
  if (ok) {
    ok = csv.size() == 2 && !csv[0].empty() && csv[0] == csv[1];
    detail = "two CLI runs, " + fmt(csv.empty() ? 0 : csv[0].size()) +
             "-byte metrics.csv, byte-identical: " + (ok ? "yes" : "no");
  }
  report(9, "end-to-end CLI determinism", ok, detail);
}

void criterion_10(const MetricsReport& mixed) {
  const PrefixPool probe(8, 1, 1);
  const long budget = static_cast<long>(probe.heavy_hitter_budget());
  bool ok = mixed.max_heavy_keys_per_rebalance <= budget;

  std::mt19937_64 rng(17);
  int tree_matches = 0;
  const int trees = 1000;
  for (int t = 0; t < trees; ++t) {
    const long seg = 2 + static_cast<long>(rng() % 3);
    PrefixPool p(4, 100000, seg);
    std::vector<std::vector<TokenId>> seqs;
    const int n_seq = 1 + static_cast<int>(rng() % 8);
    bool inserted = true;
    for (int i = 0; i < n_seq; ++i) {
      std::vector<TokenId> s;
      if (!seqs.empty() && rng() % 2) {
        const auto& base = seqs[rng() % seqs.size()];
        s.assign(base.begin(), base.begin() + rng() % (base.size() + 1));
      }
      const auto tail = random_tokens(rng, 1 + rng() % 20, 6);
      s.insert(s.end(), tail.begin(), tail.end());
      seqs.push_back(s);
      inserted = inserted && p.insert_prefix(s, i).has_value();
    }
    for (int touch = 0; touch < 30; ++touch) {
      const auto& s = seqs[rng() % seqs.size()];
      const auto chain = p.key_chain(s);
      const std::size_t upto = 1 + rng() % chain.size();
      for (std::size_t i = 0; i < upto; ++i) {
        p.select_replica(chain[i].key, rng, touch);
      }
    }
    bool match = inserted;
    for (std::size_t b : {std::size_t{1}, std::size_t{3}, std::size_t{8},
                          p.heavy_hitter_budget()}) {
      match = match && p.find_heavy_hitters(b) == heavy_oracle(p, b);
    }
    if (match) ++tree_matches;
  }
  ok = ok && tree_matches == trees;
  report(10, "heavy-hitter budget bound and oracle", ok,
         "max keys per rebalance " + fmt(mixed.max_heavy_keys_per_rebalance) +
             " <= budget " + fmt(budget) + ", " + fmt(tree_matches) + "/" +
             fmt(trees) + " tree oracle matches");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <cli-binary> <source-dir>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path source_dir = argv[2];
  const fs::path profile_path = source_dir / "profiles" / "a100.profile";

  const HardwareProfile prof = load_profile(profile_path.string());
  criterion_1_2(prof);
  criterion_3();
  criterion_4();
  criterion_5();
  const auto skewed = skewed_trace();
  criterion_6(skewed);
  criterion_7();
  const MetricsReport mixed = criterion_8(mixed_trace());
  criterion_9(cli, profile_path);
  criterion_10(mixed);

  std::cout << (g_failures == 0 ? "ACCEPTANCE PASSED"
                                : "ACCEPTANCE FAILED") << " (" << g_failures
            << " failing criteria)\n";
  return g_failures == 0 ? 0 : 1;
}
