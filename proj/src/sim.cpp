#include "tokenpool/sim.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "tokenpool/dispatcher.hpp"

namespace tokenpool {

PolicyKind policy_from_string(const std::string& s) {
  if (s == "pooled") return PolicyKind::kPooled;
  if (s == "cache_aware_router") return PolicyKind::kCacheAwareRouter;
  if (s == "pd_disagg") return PolicyKind::kPdDisagg;
  if (s == "strict_locality") return PolicyKind::kStrictLocality;
  throw std::invalid_argument("unknown policy: " + s);
}

std::string policy_to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kPooled: return "pooled";
    case PolicyKind::kCacheAwareRouter: return "cache_aware_router";
    case PolicyKind::kPdDisagg: return "pd_disagg";
    case PolicyKind::kStrictLocality: return "strict_locality";
  }
  return "?";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Session {
  std::vector<const TraceRecord*> turns;
  int next_turn = 0;
};

struct Active {
  const TraceRecord* rec = nullptr;
  long context_len = 0;
  std::vector<ChainLink> chain;  // full-context key chain
  long links_done = 0;           // leading chain links currently cached
  long prefilled = 0;            // context tokens hit or computed
  long pending = 0;              // context tokens still to prefill
  long generated = 0;
  Phase phase = Phase::kPrefill;
  double slo_tbt = 0;
  double ref_ttft = 0;
  double ref_tbt = 0;
  double ttft = 0;
  std::vector<double> tbt;
  int instance = -1;         // executing instance (baselines; pd: prefill)
  int decode_instance = -1;  // pd_disagg
  int insert_attempts = 0;
  long pinned_links = 0;     // leading chain links we hold pins on
  double pending_comm = 0;   // transfer seconds to charge at next iteration
};

}  // namespace

struct Simulator::Impl {
  SimConfig cfg;
  std::vector<TraceRecord> trace;
  std::map<long, Session> sessions;

  // Admission gating: first turns in arrival order, later turns released by
  // their predecessor's completion.
  std::vector<const TraceRecord*> turn0_;
  std::size_t turn0_next_ = 0;
  std::vector<std::pair<const TraceRecord*, double>> future_turns_;

  std::vector<std::unique_ptr<Active>> actives;

  std::unique_ptr<PrefixPool> global_pool;            // pooled / strict
  std::vector<std::unique_ptr<PrefixPool>> local_pools;  // router / pd

  std::mt19937_64 rng;
  double clock = 0;
  long iteration = 0;
  long invariant_violations = 0;
  MetricsReport out;

  explicit Impl(const SimConfig& config, std::vector<TraceRecord> t)
      : cfg(config), trace(std::move(t)), rng(config.seed) {
    cfg.profile.validate();
    if (cfg.model.calibration == "uncalibrated") cfg.model = calibrate(cfg.profile);
    if (cfg.segment_size <= 0) cfg.segment_size = default_segment_size(cfg.profile);
    if (cfg.n_instances < 1) throw std::invalid_argument("sim: n_instances");
    if (cfg.policy.kind == PolicyKind::kPdDisagg &&
        cfg.policy.prefill_instances + cfg.policy.decode_instances !=
            cfg.n_instances) {
      throw std::invalid_argument("sim: pd split must sum to n_instances");
    }
    const bool shared = cfg.policy.kind == PolicyKind::kPooled ||
                        cfg.policy.kind == PolicyKind::kStrictLocality;
    if (shared) {
      global_pool = std::make_unique<PrefixPool>(
          cfg.n_instances, cfg.slot_capacity, cfg.segment_size);
      global_pool->overload_delta = cfg.overload_delta;
    } else {
      for (int i = 0; i < cfg.n_instances; ++i) {
        local_pools.push_back(std::make_unique<PrefixPool>(
            1, cfg.slot_capacity, cfg.segment_size));
      }
    }
    std::stable_sort(trace.begin(), trace.end(),
                     [](const TraceRecord& a, const TraceRecord& b) {
                       if (a.arrival_time != b.arrival_time)
                         return a.arrival_time < b.arrival_time;
                       return a.request_id < b.request_id;
                     });
    for (const auto& r : trace) {
      auto& s = sessions[r.session_id];
      if (static_cast<int>(s.turns.size()) <= r.turn_index) {
        s.turns.resize(r.turn_index + 1, nullptr);
      }
      s.turns[r.turn_index] = &r;
    }
    for (const auto& r : trace) {
      if (r.turn_index == 0) turn0_.push_back(&r);
    }
    out.n_instances = cfg.n_instances;
    out.cv_window = cfg.cv_window;
  }

  PrefixPool& pool_of(int instance) {
    return global_pool ? *global_pool : *local_pools[instance];
  }

  // --- token materialization ----------------------------------------------
  long doc_len(long doc_id) const {
    return doc_id >= 0 ? doc_length(doc_id, cfg.doc_len_mean) : 0;
  }

  long context_length(const TraceRecord& rec) const {
    long len = cfg.system_prompt_len + doc_len(rec.shared_prefix_id);
    const auto& s = sessions.at(rec.session_id);
    for (int k = 0; k < rec.turn_index; ++k) {
      len += s.turns[k]->input_len + s.turns[k]->output_len;
    }
    return len + rec.input_len;
  }

  std::vector<TokenId> materialize(const TraceRecord& rec,
                                   bool with_output) const {
    std::vector<TokenId> t;
    t.reserve(context_length(rec) + (with_output ? rec.output_len : 0));
    for (long i = 0; i < cfg.system_prompt_len; ++i) {
      t.push_back(system_prompt_token(i));
    }
    const long dl = doc_len(rec.shared_prefix_id);
    for (long i = 0; i < dl; ++i) {
      t.push_back(doc_token(rec.shared_prefix_id, i));
    }
    const auto& s = sessions.at(rec.session_id);
    for (int k = 0; k < rec.turn_index; ++k) {
      for (long i = 0; i < s.turns[k]->input_len; ++i) {
        t.push_back(turn_input_token(rec.session_id, k, i));
      }
      for (long i = 0; i < s.turns[k]->output_len; ++i) {
        t.push_back(turn_output_token(rec.session_id, k, i));
      }
    }
    for (long i = 0; i < rec.input_len; ++i) {
      t.push_back(turn_input_token(rec.session_id, rec.turn_index, i));
    }
    if (with_output) {
      for (long i = 0; i < rec.output_len; ++i) {
        t.push_back(turn_output_token(rec.session_id, rec.turn_index, i));
      }
    }
    return t;
  }

  // --- metrics helpers -----------------------------------------------------
  void record_access(int instance, double count) {
    const std::size_t w =
        static_cast<std::size_t>(std::floor(clock / cfg.cv_window));
    if (out.access_windows.size() <= w) {
      out.access_windows.resize(w + 1,
                                std::vector<double>(cfg.n_instances, 0.0));
    }
    out.access_windows[w][instance] += count;
  }

  // --- admission -----------------------------------------------------------
  double next_event_time() const {
    double t = kInf;
    if (turn0_next_ < turn0_.size()) {
      t = std::min(t, turn0_[turn0_next_]->arrival_time);
    }
    for (const auto& [rec, ready] : future_turns_) {
      t = std::min(t, std::max(rec->arrival_time, ready));
    }
    return t;
  }

  void admit_ready() {
    std::vector<const TraceRecord*> ready;
    while (turn0_next_ < turn0_.size() &&
           turn0_[turn0_next_]->arrival_time <= clock) {
      ready.push_back(turn0_[turn0_next_++]);
    }
    for (auto it = future_turns_.begin(); it != future_turns_.end();) {
      if (std::max(it->first->arrival_time, it->second) <= clock) {
        ready.push_back(it->first);
        it = future_turns_.erase(it);
      } else {
        ++it;
      }
    }
    std::stable_sort(ready.begin(), ready.end(),
                     [](const TraceRecord* a, const TraceRecord* b) {
                       if (a->arrival_time != b->arrival_time)
                         return a->arrival_time < b->arrival_time;
                       return a->request_id < b->request_id;
                     });
    for (const auto* rec : ready) admit(*rec);
  }

  void admit(const TraceRecord& rec) {
    auto a = std::make_unique<Active>();
    a->rec = &rec;
    a->context_len = context_length(rec);
    const auto tokens = materialize(rec, false);
    // All pools share the segment size, so the chain is policy-independent.
    PrefixPool& any = global_pool ? *global_pool : *local_pools[0];
    a->chain = any.key_chain(tokens);

    const double prefix_d =
        static_cast<double>(a->context_len - rec.input_len);
    a->ref_ttft = estimate_batch_latency(
        {{prefix_d, static_cast<double>(rec.input_len)}}, 1, 0, cfg.model);
    a->ref_tbt = estimate_batch_latency(
        {{static_cast<double>(a->context_len), 1.0}}, 1, 0, cfg.model);
    a->slo_tbt = cfg.slo_multiplier * a->ref_tbt;

    PrefixPool* match_pool = nullptr;
    switch (cfg.policy.kind) {
      case PolicyKind::kPooled: {
        match_pool = global_pool.get();
        break;
      }
      case PolicyKind::kStrictLocality: {
        match_pool = global_pool.get();
        const auto m = global_pool->match_chain(a->chain);
        if (!m.chain.empty()) {
          const Segment* seg = global_pool->find(m.chain.back());
          a->instance = *seg->replicas.begin();
        } else {
          a->instance =
              PrefixPool::home_instance(a->chain.front().key, cfg.n_instances);
        }
        break;
      }
      case PolicyKind::kCacheAwareRouter: {
        std::vector<double> queued(cfg.n_instances, 0.0);
        for (const auto& act : actives) {
          if (act->instance >= 0) {
            queued[act->instance] += static_cast<double>(act->pending) + 1.0;
          }
        }
        int best = 0;
        double best_score = -kInf;
        for (int i = 0; i < cfg.n_instances; ++i) {
          const double hit = static_cast<double>(
              local_pools[i]->match_chain(a->chain).hit_tokens);
          const double score =
              cfg.policy.w_hit * hit - cfg.policy.w_load * queued[i];
          if (score > best_score) {
            best_score = score;
            best = i;
          }
        }
        a->instance = best;
        match_pool = local_pools[best].get();
        break;
      }
      case PolicyKind::kPdDisagg: {
        std::vector<double> queued(cfg.policy.prefill_instances, 0.0);
        for (const auto& act : actives) {
          if (act->phase == Phase::kPrefill && act->instance >= 0 &&
              act->instance < cfg.policy.prefill_instances) {
            queued[act->instance] += static_cast<double>(act->pending) + 1.0;
          }
        }
        int best = 0;
        for (int i = 1; i < cfg.policy.prefill_instances; ++i) {
          if (queued[i] < queued[best]) best = i;
        }
        a->instance = best;
        match_pool = local_pools[best].get();
        break;
      }
    }

    const auto m = match_pool->match_chain(a->chain);
    a->links_done = static_cast<long>(m.chain.size());
    a->prefilled = m.hit_tokens;
    a->pending = a->context_len - m.hit_tokens;
    out.cacheable_tokens += static_cast<double>(a->context_len);
    out.hit_tokens += static_cast<double>(m.hit_tokens);
    const long prior = a->context_len - rec.input_len;
    out.recompute_tokens +=
        static_cast<double>(std::max<long>(0, prior - m.hit_tokens));
    for (long i = 0; i < a->links_done; ++i) match_pool->pin(a->chain[i].key);
    a->pinned_links = a->links_done;
    a->phase = a->pending > 0 ? Phase::kPrefill : Phase::kDecode;
    actives.push_back(std::move(a));
  }

  // --- lifecycle -----------------------------------------------------------
  PrefixPool& pin_pool(const Active& a) {
    if (global_pool) return *global_pool;
    if (cfg.policy.kind == PolicyKind::kPdDisagg) {
      return *local_pools[a.instance];  // pins live on the prefill side
    }
    return *local_pools[a.instance];
  }

  void release(Active& a) {
    PrefixPool& p = pin_pool(a);
    for (long i = 0; i < a.pinned_links; ++i) p.unpin(a.chain[i].key);
    a.pinned_links = 0;
  }

  void finish_request(Active& a, bool dropped) {
    RequestMetrics rm;
    rm.request_id = a.rec->request_id;
    rm.arrival = a.rec->arrival_time;
    rm.ttft = a.ttft;
    rm.input_len = a.rec->input_len;
    rm.tbt = a.tbt;
    rm.dropped = dropped;
    rm.ref_ttft = a.ref_ttft;
    rm.ref_tbt = a.ref_tbt;
    out.requests.push_back(std::move(rm));
    if (dropped) {
      out.drops += 1;
    } else {
      // Cache the full sequence (context + output) for future turns.
      const auto full = materialize(*a.rec, true);
      PrefixPool& p = pin_pool(a);
      const auto chain = p.key_chain(full);
      if (cfg.policy.kind == PolicyKind::kStrictLocality) {
        long spilled = 0;
        p.insert_chain(chain, iteration, a.instance, &spilled);
        out.comm_bytes += static_cast<double>(spilled) *
                          kv_put_volume(cfg.profile, cfg.segment_size) *
                          cfg.profile.layers;
      } else {
        p.insert_chain(chain, iteration);
      }
      if (cfg.policy.kind == PolicyKind::kPdDisagg && a.decode_instance >= 0) {
        local_pools[a.decode_instance]->insert_chain(chain, iteration);
      }
    }
    release(a);
    // Release the session's next turn.
    auto& s = sessions.at(a.rec->session_id);
    s.next_turn = a.rec->turn_index + 1;
    if (s.next_turn < static_cast<int>(s.turns.size()) &&
        s.turns[s.next_turn] != nullptr) {
      future_turns_.push_back({s.turns[s.next_turn], clock});
    }
    auto it = std::find_if(actives.begin(), actives.end(),
                           [&](const auto& p2) { return p2.get() == &a; });
    actives.erase(it);
  }

  // Advance a prefill request by `processed` tokens; returns false if the
  // request was dropped (insert deadlock).
  bool advance_prefill(Active& a, long processed, PrefixPool& p,
                       std::optional<int> forced_home) {
    a.prefilled += processed;
    a.pending -= processed;
    long candidate = a.links_done;
    long covered = 0;
    for (long i = 0; i < candidate; ++i) covered += a.chain[i].token_count;
    while (candidate < static_cast<long>(a.chain.size()) &&
           covered + a.chain[candidate].token_count <= a.prefilled) {
      covered += a.chain[candidate].token_count;
      ++candidate;
    }
    if (candidate > a.links_done) {
      std::vector<ChainLink> prefix(a.chain.begin(),
                                    a.chain.begin() + candidate);
      long spilled = 0;
      auto res = p.insert_chain(prefix, iteration, forced_home,
                                forced_home ? &spilled : nullptr);
      if (res) {
        for (long i = a.pinned_links; i < candidate; ++i) {
          p.pin(a.chain[i].key);
        }
        a.pinned_links = candidate;
        a.links_done = candidate;
        a.insert_attempts = 0;
        if (spilled > 0) {
          out.comm_bytes += static_cast<double>(spilled) *
                            kv_put_volume(cfg.profile, cfg.segment_size) *
                            cfg.profile.layers;
        }
      } else {
        if (++a.insert_attempts > cfg.admission_retries) {
          finish_request(a, true);
          return false;
        }
      }
    }
    if (a.pending == 0 && a.links_done == static_cast<long>(a.chain.size())) {
      a.phase = Phase::kDecode;
      a.generated = 1;
      a.ttft = clock - a.rec->arrival_time;
      if (a.rec->output_len <= 1) {
        finish_request(a, false);
        return false;
      }
      if (cfg.policy.kind == PolicyKind::kPdDisagg) {
        handoff_to_decode(a);
      }
    }
    return true;
  }

  void handoff_to_decode(Active& a) {
    std::vector<double> queued(cfg.policy.decode_instances, 0.0);
    for (const auto& act : actives) {
      if (act->phase == Phase::kDecode && act->decode_instance >= 0) {
        queued[act->decode_instance - cfg.policy.prefill_instances] +=
            static_cast<double>(act->context_len);
      }
    }
    int best = 0;
    for (int i = 1; i < cfg.policy.decode_instances; ++i) {
      if (queued[i] < queued[best]) best = i;
    }
    a.decode_instance = cfg.policy.prefill_instances + best;
    // Full prefix-cache transfer, charged at the phase handoff.
    const double bytes = kv_put_volume(cfg.profile,
                                       static_cast<double>(a.context_len)) *
                         cfg.profile.layers;
    out.comm_bytes += bytes;
    a.pending_comm += bytes / cfg.profile.net_bw;
    auto res = local_pools[a.decode_instance]->insert_chain(a.chain, iteration);
    if (!res) {
      out.recompute_tokens += static_cast<double>(a.context_len);
    }
  }

  // --- stepping ------------------------------------------------------------
  IterationLog step() {
    IterationLog log;
    log.busy_seconds.assign(cfg.n_instances, 0.0);
    log.cache_accesses.assign(cfg.n_instances, 0.0);
    if (global_pool) global_pool->decay_loads();
    admit_ready();

    if (actives.empty()) {
      const double t = next_event_time();
      if (t < kInf) clock = std::max(clock, t);
      ++iteration;
      ++out.iterations;
      return log;
    }

    const long evict_before = total_evictions();
    if (cfg.policy.kind == PolicyKind::kPooled) {
      step_pooled(log);
    } else {
      step_instanced(log);
    }
    log.evictions = total_evictions() - evict_before;
    out.evictions += log.evictions;

    for (int i = 0; i < cfg.n_instances; ++i) {
      if (log.cache_accesses[i] > 0) record_access(i, log.cache_accesses[i]);
    }
    clock += log.latency;
    out.sim_seconds = clock;
    ++iteration;
    ++out.iterations;

    if (cfg.check_invariants && global_pool) {
      if (!global_pool->check_capacity() || !global_pool->check_dedup()) {
        ++invariant_violations;
      }
    }
    return log;
  }

  long total_evictions() const {
    long n = global_pool ? global_pool->total_evictions : 0;
    for (const auto& p : local_pools) n += p->total_evictions;
    return n;
  }

  void step_pooled(IterationLog& log) {
    PrefixPool& p = *global_pool;
    // Scheduler inputs: all decode requests plus a bounded prefill window.
    std::vector<Active*> sched;
    int prefills = 0;
    for (const auto& a : actives) {
      if (a->phase == Phase::kDecode) {
        sched.push_back(a.get());
      } else if (prefills < cfg.max_prefill_window) {
        sched.push_back(a.get());
        ++prefills;
      }
    }
    std::vector<PhaseRequest> reqs;
    std::vector<RequestShape> shapes;
    std::unordered_map<int, Active*> by_id;
    for (std::size_t idx = 0; idx < sched.size(); ++idx) {
      Active* a = sched[idx];
      PhaseRequest r;
      r.request_id = static_cast<int>(idx);
      r.session_id = static_cast<int>(a->rec->session_id);
      r.phase = a->phase;
      if (a->phase == Phase::kPrefill) {
        r.context_len = a->context_len;
        r.input_len = a->pending;
        r.slo_tbt = kInf;  // the TBT SLO constrains decode batches
      } else {
        r.context_len = a->context_len + a->generated;
        r.input_len = 1;
        r.slo_tbt = a->slo_tbt;
      }
      by_id[r.request_id] = a;
      const long input = a->phase == Phase::kPrefill
                             ? std::min(a->pending, cfg.chunk_size)
                             : 1;
      shapes.push_back({static_cast<double>(r.context_len - input),
                        static_cast<double>(input)});
      reqs.push_back(r);
    }
    const double load =
        consume_cache_load(shapes, cfg.n_instances, cfg.profile, cfg.model);
    const auto chunked = chunk_prefill(reqs, cfg.chunk_size);
    const auto decision =
        plan(chunked, cfg.n_instances, load, cfg.model, kInf);

    // Build dispatch nodes, touching replicas along the way.
    std::vector<BatchNode> nodes;
    std::vector<double> node_latency;
    std::vector<double> node_quad;  // self-attention overlap budget, seconds
    std::vector<double> node_input;  // tokens processed per shard
    std::vector<std::vector<Active*>> node_members;
    int batch_seq = 0;
    for (const auto& b : decision.batches) {
      Batch batch;
      batch.batch_id = batch_seq++;
      double quad = 0;
      double batch_input = 0;
      std::vector<Active*> members;
      for (int rid : b.request_ids) {
        Active* a = by_id.at(rid);
        members.push_back(a);
        const long input = a->phase == Phase::kPrefill
                               ? std::min(a->pending, cfg.chunk_size)
                               : 1;
        // Query spans over the cached prefix.
        for (long i = 0; i < a->links_done; ++i) {
          const int inst = p.select_replica(a->chain[i].key, rng, iteration);
          log.cache_accesses[inst] += 1;
          batch.touches.push_back({a->chain[i].token_count, inst, false});
        }
        // Put spans for segments this chunk completes.
        long covered = 0;
        for (long i = 0; i < a->links_done; ++i) {
          covered += a->chain[i].token_count;
        }
        long end = a->prefilled + (a->phase == Phase::kPrefill ? input : 0);
        for (long i = a->links_done;
             i < static_cast<long>(a->chain.size()) &&
             covered + a->chain[i].token_count <= end;
             ++i) {
          covered += a->chain[i].token_count;
          batch.touches.push_back(
              {a->chain[i].token_count,
               PrefixPool::home_instance(a->chain[i].key, cfg.n_instances),
               true});
        }
        const double prefix = static_cast<double>(
            (a->phase == Phase::kPrefill ? a->context_len : a->context_len +
                                                                a->generated) -
            input);
        quad += (prefix + static_cast<double>(input)) *
                static_cast<double>(input);
        batch_input += static_cast<double>(input);
      }
      auto split = decompose(batch, b.dop);
      for (auto& node : split) {
        nodes.push_back(std::move(node));
        node_latency.push_back(b.est_latency);
        node_quad.push_back(cfg.model.quad_coef * quad /
                            (static_cast<double>(b.dop) * (1.0 - load)));
        node_input.push_back(batch_input / static_cast<double>(b.dop));
        node_members.push_back(members);
      }
    }

    std::vector<int> where(nodes.size(), 0);
    if (!nodes.empty()) {
      const auto dplan = assign(nodes, cfg.n_instances, cfg.profile);
      where = dplan.assignment;
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const int inst = where[i];
      double query_remote = 0;
      for (int q : nodes[i].query_set) {
        if (q != inst) query_remote += 1;
      }
      double put_bytes = 0;
      for (const auto& [target, count] : nodes[i].put_map) {
        if (target != inst) {
          put_bytes += kv_put_volume(cfg.profile,
                                     static_cast<double>(count) *
                                         static_cast<double>(cfg.segment_size));
        }
      }
      const double query_bytes =
          query_comm_volume(cfg.profile, node_input[i], query_remote);
      const double comm_bytes = (query_bytes + put_bytes) * cfg.profile.layers;
      double comm_s = comm_bytes / cfg.profile.net_bw;
      if (query_remote > 0 || put_bytes > 0) {
        comm_s += 2.0 * cfg.profile.net_latency * cfg.profile.layers;
      }
      out.comm_bytes += comm_bytes;
      // Communication overlaps with local self-attention.
      const double exposed = std::max(0.0, comm_s - node_quad[i]);
      log.busy_seconds[inst] += node_latency[i] + exposed;
    }
    log.latency = 0;
    for (double b : log.busy_seconds) log.latency = std::max(log.latency, b);

    // Advance requests batch by batch in decision order.
    std::set<Active*> advanced;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].dop_index != 0) continue;  // one advance per batch
      const double batch_latency = log.busy_seconds[where[i]];
      for (Active* a : node_members[i]) {
        if (advanced.count(a)) continue;
        advanced.insert(a);
        if (a->phase == Phase::kPrefill) {
          const long processed = std::min(a->pending, cfg.chunk_size);
          // clock has not advanced yet; TTFT uses end-of-iteration time.
          const double save_clock = clock;
          clock += log.latency;
          advance_prefill(*a, processed, p, std::nullopt);
          clock = save_clock;
        } else {
          a->tbt.push_back(batch_latency);
          a->generated += 1;
          if (a->generated >= a->rec->output_len) {
            finish_request(*a, false);
            ++log.completed;
          }
        }
      }
    }

    const auto actions = p.rebalance(iteration);
    for (const auto& act : actions) {
      if (act.to >= 0) {
        ++log.replications;
        ++out.replications;
      }
    }
    log.heavy_keys = static_cast<long>(p.heavy_set().size());
    out.max_heavy_keys_per_rebalance =
        std::max(out.max_heavy_keys_per_rebalance, log.heavy_keys);
  }

  // Router, PD-disaggregation and strict-locality policies all execute
  // whole requests on single instances; they differ in routing and cache
  // ownership.
  void step_instanced(IterationLog& log) {
    std::vector<std::vector<Active*>> per_instance(cfg.n_instances);
    for (const auto& a : actives) {
      const int inst = (cfg.policy.kind == PolicyKind::kPdDisagg &&
                        a->phase == Phase::kDecode)
                           ? a->decode_instance
                           : a->instance;
      if (inst >= 0) per_instance[inst].push_back(a.get());
    }
    for (int i = 0; i < cfg.n_instances; ++i) {
      if (per_instance[i].empty()) continue;
      std::vector<RequestShape> shapes;
      for (Active* a : per_instance[i]) {
        if (a->phase == Phase::kPrefill) {
          const long input = std::min(a->pending, cfg.chunk_size);
          shapes.push_back(
              {static_cast<double>(a->context_len - input),
               static_cast<double>(input)});
        } else {
          shapes.push_back(
              {static_cast<double>(a->context_len + a->generated), 1.0});
        }
      }
      double busy = estimate_batch_latency(shapes, 1, 0, cfg.model);
      for (Active* a : per_instance[i]) {
        busy += a->pending_comm;
        a->pending_comm = 0;
      }
      log.busy_seconds[i] = busy;
      // Cache accesses: each request touches its cached chain.
      PrefixPool& p = pool_of(i);
      for (Active* a : per_instance[i]) {
        const long links = a->phase == Phase::kPrefill
                               ? a->links_done
                               : static_cast<long>(a->chain.size());
        long touched = 0;
        for (long k = 0; k < links; ++k) {
          if (global_pool) {
            const int inst = p.select_replica(a->chain[k].key, rng, iteration);
            log.cache_accesses[inst] += 1;
          } else if (p.contains(a->chain[k].key)) {
            p.select_replica(a->chain[k].key, rng, iteration);
            ++touched;
          }
        }
        if (!global_pool) log.cache_accesses[i] += touched;
      }
    }
    log.latency = 0;
    for (double b : log.busy_seconds) log.latency = std::max(log.latency, b);

    for (int i = 0; i < cfg.n_instances; ++i) {
      std::vector<Active*> members = per_instance[i];
      for (Active* a : members) {
        PrefixPool& p = pool_of(i);
        if (a->phase == Phase::kPrefill) {
          const long processed = std::min(a->pending, cfg.chunk_size);
          const double save_clock = clock;
          clock += log.latency;
          std::optional<int> forced;
          if (cfg.policy.kind == PolicyKind::kStrictLocality) forced = i;
          advance_prefill(*a, processed, p, forced);
          clock = save_clock;
        } else {
          a->tbt.push_back(log.busy_seconds[i]);
          a->generated += 1;
          if (a->generated >= a->rec->output_len) {
            finish_request(*a, false);
            ++log.completed;
          }
        }
      }
    }
  }

  bool done() const {
    return actives.empty() && turn0_next_ >= turn0_.size() &&
           future_turns_.empty();
  }
};

Simulator::Simulator(const SimConfig& config, std::vector<TraceRecord> trace)
    : impl_(std::make_unique<Impl>(config, std::move(trace))) {}
Simulator::~Simulator() = default;

bool Simulator::done() const { return impl_->done(); }
IterationLog Simulator::step() { return impl_->step(); }
MetricsReport Simulator::report() const { return impl_->out; }
const PrefixPool& Simulator::pool() const { return *impl_->global_pool; }
long Simulator::invariant_violations() const {
  return impl_->invariant_violations;
}
double Simulator::clock_seconds() const { return impl_->clock; }

MetricsReport run(const SimConfig& config,
                  const std::vector<TraceRecord>& trace) {
  Simulator sim(config, trace);
  while (!sim.done()) sim.step();
  return sim.report();
}

long unique_segment_footprint(const SimConfig& config,
                              const std::vector<TraceRecord>& trace) {
  SimConfig cfg = config;
  cfg.profile.validate();
  if (cfg.segment_size <= 0) cfg.segment_size = default_segment_size(cfg.profile);
  // Count distinct keys over every session's final full sequence.
  std::set<SegmentKey> keys;
  PrefixPool scratch(1, 1, cfg.segment_size);
  std::map<long, const TraceRecord*> last_turn;
  for (const auto& r : trace) {
    auto it = last_turn.find(r.session_id);
    if (it == last_turn.end() || r.turn_index > it->second->turn_index) {
      last_turn[r.session_id] = &r;
    }
  }
  // Materialization needs the session registry; rebuild it here.
  std::map<long, Session> sessions;
  for (const auto& r : trace) {
    auto& s = sessions[r.session_id];
    if (static_cast<int>(s.turns.size()) <= r.turn_index) {
      s.turns.resize(r.turn_index + 1, nullptr);
    }
    s.turns[r.turn_index] = &r;
  }
  for (const auto& [sid, rec] : last_turn) {
    std::vector<TokenId> t;
    for (long i = 0; i < cfg.system_prompt_len; ++i) {
      t.push_back(system_prompt_token(i));
    }
    if (rec->shared_prefix_id >= 0) {
      const long dl = doc_length(rec->shared_prefix_id, cfg.doc_len_mean);
      for (long i = 0; i < dl; ++i) {
        t.push_back(doc_token(rec->shared_prefix_id, i));
      }
    }
    const auto& s = sessions.at(sid);
    for (int k = 0; k <= rec->turn_index; ++k) {
      const TraceRecord* tr = s.turns[k];
      if (!tr) continue;
      for (long i = 0; i < tr->input_len; ++i) {
        t.push_back(turn_input_token(sid, k, i));
      }
      for (long i = 0; i < tr->output_len; ++i) {
        t.push_back(turn_output_token(sid, k, i));
      }
    }
    for (const auto& link : scratch.key_chain(t)) keys.insert(link.key);
  }
  return static_cast<long>(keys.size());
}

}  // namespace tokenpool
