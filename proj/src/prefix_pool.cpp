#include "tokenpool/prefix_pool.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace tokenpool {

PrefixPool::PrefixPool(int n_instances, long slot_capacity, long segment_size)
    : n_instances_(n_instances),
      slot_capacity_(slot_capacity),
      segment_size_(segment_size),
      stored_(n_instances),
      access_load_(n_instances, 0.0) {
  if (n_instances < 1) throw std::invalid_argument("PrefixPool: n >= 1");
  if (slot_capacity < 1) throw std::invalid_argument("PrefixPool: capacity");
  if (segment_size < 1) throw std::invalid_argument("PrefixPool: segment size");
}

std::vector<ChainLink> PrefixPool::key_chain(
    std::span<const TokenId> tokens) const {
  std::vector<ChainLink> chain;
  std::uint64_t h = kFnvOffsetBasis;
  long in_segment = 0;
  for (TokenId t : tokens) {
    h = fnv1a_token(h, t);
    if (++in_segment == segment_size_) {
      chain.push_back({h, in_segment});
      in_segment = 0;
    }
  }
  if (in_segment > 0) chain.push_back({h, in_segment});
  return chain;
}

int PrefixPool::home_instance(SegmentKey key, int n) {
  if (n < 1) throw std::invalid_argument("home_instance: n >= 1");
  return static_cast<int>(mix64(key) % static_cast<std::uint64_t>(n));
}

const Segment* PrefixPool::find(SegmentKey key) const {
  auto it = nodes_.find(key);
  return it == nodes_.end() ? nullptr : &it->second;
}

const std::set<SegmentKey>& PrefixPool::children(SegmentKey key) const {
  static const std::set<SegmentKey> kEmpty;
  auto it = children_.find(key);
  return it == children_.end() ? kEmpty : it->second;
}

std::optional<std::vector<SegmentKey>> PrefixPool::insert_prefix(
    std::span<const TokenId> tokens, std::int64_t now) {
  if (tokens.empty()) throw std::invalid_argument("insert_prefix: empty");
  return insert_chain(key_chain(tokens), now);
}

std::optional<std::vector<SegmentKey>> PrefixPool::insert_chain(
    const std::vector<ChainLink>& chain, std::int64_t now,
    std::optional<int> forced_home, long* spilled) {
  (void)now;
  std::vector<SegmentKey> keys;
  keys.reserve(chain.size());
  bool ok = true;
  for (std::size_t i = 0; i < chain.size() && ok; ++i) {
    const SegmentKey key = chain[i].key;
    auto it = nodes_.find(key);
    if (it == nodes_.end()) {
      int home = forced_home ? *forced_home : home_instance(key, n_instances_);
      if (!ensure_slot(home)) {
        if (forced_home) {
          // Spill: emptiest other instance that can take the segment.
          int alt = -1;
          for (int j = 0; j < n_instances_; ++j) {
            if (j == home) continue;
            if (alt < 0 || stored_[j].size() < stored_[alt].size()) alt = j;
          }
          if (alt >= 0 && ensure_slot(alt)) {
            home = alt;
            if (spilled) ++*spilled;
          } else {
            ok = false;
            break;
          }
        } else {
          ok = false;
          break;
        }
      }
      Segment seg;
      seg.key = key;
      if (i > 0) seg.parent = chain[i - 1].key;
      seg.depth = static_cast<int>(i);
      seg.token_count = chain[i].token_count;
      seg.replicas.insert(home);
      nodes_.emplace(key, std::move(seg));
      stored_[home].insert(key);
      if (i > 0) {
        children_[chain[i - 1].key].insert(key);
      } else {
        root_children_.insert(key);
      }
    }
    keys.push_back(key);
    pin(key);  // held while the rest of the chain is placed
  }
  for (SegmentKey k : keys) unpin(k);
  if (!ok) return std::nullopt;
  return keys;
}

bool PrefixPool::ensure_slot(int instance) {
  if (static_cast<long>(stored_[instance].size()) <
      slot_capacity_) {
    return true;
  }
  const long over =
      static_cast<long>(stored_[instance].size()) - slot_capacity_ + 1;
  return evict(instance, over).has_value();
}

PrefixPool::MatchResult PrefixPool::match_chain(
    const std::vector<ChainLink>& chain) const {
  MatchResult r;
  for (const auto& link : chain) {
    auto it = nodes_.find(link.key);
    if (it == nodes_.end() || it->second.token_count != link.token_count) {
      break;
    }
    r.chain.push_back(link.key);
    r.hit_tokens += link.token_count;
  }
  return r;
}

PrefixPool::MatchResult PrefixPool::match_prefix(
    std::span<const TokenId> tokens) const {
  MatchResult r;
  std::uint64_t h = kFnvOffsetBasis;
  std::size_t pos = 0;
  std::optional<SegmentKey> last;
  // Walk full segments first.
  while (pos + static_cast<std::size_t>(segment_size_) <= tokens.size()) {
    std::uint64_t next = h;
    for (long i = 0; i < segment_size_; ++i) {
      next = fnv1a_token(next, tokens[pos + static_cast<std::size_t>(i)]);
    }
    auto it = nodes_.find(next);
    if (it == nodes_.end() || it->second.token_count != segment_size_) break;
    h = next;
    pos += static_cast<std::size_t>(segment_size_);
    r.chain.push_back(next);
    r.hit_tokens += segment_size_;
    last = next;
  }
  // A cached partial tail can still match inside the remaining tokens.
  const long remaining = static_cast<long>(tokens.size() - pos);
  if (remaining > 0) {
    const auto& kids = last ? children(*last) : root_children_;
    SegmentKey best = 0;
    long best_count = 0;
    for (SegmentKey c : kids) {
      const Segment& seg = nodes_.at(c);
      if (seg.token_count >= segment_size_ || seg.token_count > remaining ||
          seg.token_count <= best_count) {
        continue;
      }
      std::uint64_t th = h;
      for (long i = 0; i < seg.token_count; ++i) {
        th = fnv1a_token(th, tokens[pos + static_cast<std::size_t>(i)]);
      }
      if (th == c) {
        best = c;
        best_count = seg.token_count;
      }
    }
    if (best_count > 0) {
      r.chain.push_back(best);
      r.hit_tokens += best_count;
    }
  }
  return r;
}

int PrefixPool::select_replica(SegmentKey key, std::mt19937_64& rng,
                               std::int64_t now) {
  auto it = nodes_.find(key);
  if (it == nodes_.end() || it->second.replicas.empty()) {
    throw std::invalid_argument("select_replica: segment has no replicas");
  }
  Segment& seg = it->second;
  int chosen;
  if (seg.replicas.size() == 1) {
    chosen = *seg.replicas.begin();
  } else {
    std::vector<int> reps(seg.replicas.begin(), seg.replicas.end());
    std::uniform_int_distribution<std::size_t> d1(0, reps.size() - 1);
    std::uniform_int_distribution<std::size_t> d2(0, reps.size() - 2);
    std::size_t a = d1(rng);
    std::size_t b = d2(rng);
    if (b >= a) ++b;
    const int ia = reps[a], ib = reps[b];
    if (access_load_[ia] < access_load_[ib]) {
      chosen = ia;
    } else if (access_load_[ib] < access_load_[ia]) {
      chosen = ib;
    } else {
      chosen = std::min(ia, ib);
    }
  }
  access_load_[chosen] += 1.0;
  seg.access_count += 1;
  seg.last_access = std::max(seg.last_access, now);
  return chosen;
}

void PrefixPool::decay_loads() {
  const double f = std::pow(0.5, 1.0 / decay_half_life);
  for (double& l : access_load_) l *= f;
}

void PrefixPool::add_load(int instance, double amount) {
  access_load_[instance] += amount;
}

void PrefixPool::pin(SegmentKey key) { pinned_[key] += 1; }

void PrefixPool::unpin(SegmentKey key) {
  auto it = pinned_.find(key);
  if (it == pinned_.end()) return;
  if (--it->second <= 0) pinned_.erase(it);
}

std::size_t PrefixPool::heavy_hitter_budget() const {
  if (n_instances_ < 2) return 0;
  const double n = static_cast<double>(n_instances_);
  return static_cast<std::size_t>(std::ceil(n * std::log(n)));
}

std::vector<SegmentKey> PrefixPool::find_heavy_hitters(
    std::size_t budget) const {
  std::vector<SegmentKey> result;
  if (budget == 0) return result;
  // Min-heap of the current top-k: worst element = lowest count, then
  // largest key. Access counts are non-increasing along root paths, so a
  // child is only worth expanding if its parent still beats the k-th best.
  using Entry = std::pair<std::uint64_t, SegmentKey>;
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> top(worse);
  std::queue<SegmentKey> bfs;
  for (SegmentKey k : root_children_) bfs.push(k);
  while (!bfs.empty()) {
    const SegmentKey key = bfs.front();
    bfs.pop();
    const Segment& seg = nodes_.at(key);
    if (!top.empty() && top.size() >= budget &&
        seg.access_count < top.top().first) {
      continue;  // neither this node nor its subtree can make the top-k
    }
    if (seg.token_count == segment_size_) {  // partial tails never qualify
      const Entry e{seg.access_count, key};
      if (top.size() < budget) {
        top.push(e);
      } else if (e.first > top.top().first ||
                 (e.first == top.top().first && e.second < top.top().second)) {
        top.pop();
        top.push(e);
      }
    }
    auto it = children_.find(key);
    if (it != children_.end()) {
      for (SegmentKey c : it->second) bfs.push(c);
    }
  }
  std::vector<Entry> entries;
  while (!top.empty()) {
    entries.push_back(top.top());
    top.pop();
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const Entry& e : entries) result.push_back(e.second);
  return result;
}

std::vector<ReplicationAction> PrefixPool::rebalance(std::int64_t now) {
  (void)now;
  std::vector<ReplicationAction> actions;
  const auto heavy_list = find_heavy_hitters(heavy_hitter_budget());
  heavy_.clear();
  heavy_.insert(heavy_list.begin(), heavy_list.end());

  // De-replicate segments that fell out of the heavy set, keeping the hash
  // home copy when present.
  for (SegmentKey key : std::vector<SegmentKey>(multi_replica_.begin(),
                                                multi_replica_.end())) {
    if (heavy_.count(key)) continue;
    // Pinned segments are still pruned: dropping an extra replica keeps the
    // kept copy alive, so the pin stays satisfied.
    Segment& seg = nodes_.at(key);
    const int home = home_instance(key, n_instances_);
    const int keep = seg.replicas.count(home) ? home : *seg.replicas.begin();
    for (int inst : std::vector<int>(seg.replicas.begin(), seg.replicas.end())) {
      if (inst != keep) remove_replica(key, inst);
    }
  }

  double mean = 0;
  for (double l : access_load_) mean += l;
  mean /= static_cast<double>(n_instances_);
  if (!(mean > 0)) return actions;
  const double threshold = (1.0 + overload_delta) * mean;

  for (int i = 0; i < n_instances_; ++i) {
    if (!(access_load_[i] > threshold)) continue;
    for (SegmentKey key : heavy_list) {
      auto node_it = nodes_.find(key);
      if (node_it == nodes_.end() || !node_it->second.replicas.count(i)) {
        continue;
      }
      // Least-loaded instance without a copy, lowest index on ties.
      std::vector<int> targets;
      for (int j = 0; j < n_instances_; ++j) {
        if (!node_it->second.replicas.count(j)) targets.push_back(j);
      }
      std::stable_sort(targets.begin(), targets.end(), [&](int a, int b) {
        return access_load_[a] < access_load_[b];
      });
      int to = -1;
      for (int j : targets) {
        if (ensure_slot(j)) {
          to = j;
          break;
        }
      }
      // Making room may have evicted this segment (a last-copy subtree
      // rooted above it on the target instance drags it out); re-resolve.
      node_it = nodes_.find(key);
      if (node_it == nodes_.end() || !node_it->second.replicas.count(i)) {
        continue;
      }
      actions.push_back({key, i, to});
      if (to >= 0) {
        Segment& seg = node_it->second;
        seg.replicas.insert(to);
        stored_[to].insert(key);
        if (seg.replicas.size() > 1) multi_replica_.insert(key);
      }
    }
  }
  return actions;
}

void PrefixPool::remove_replica(SegmentKey key, int instance) {
  Segment& seg = nodes_.at(key);
  seg.replicas.erase(instance);
  stored_[instance].erase(key);
  if (seg.replicas.size() <= 1) multi_replica_.erase(key);
}

void PrefixPool::erase_node(SegmentKey key) {
  Segment& seg = nodes_.at(key);
  for (int inst : std::vector<int>(seg.replicas.begin(), seg.replicas.end())) {
    stored_[inst].erase(key);
  }
  multi_replica_.erase(key);
  heavy_.erase(key);
  if (seg.parent) {
    auto it = children_.find(*seg.parent);
    if (it != children_.end()) {
      it->second.erase(key);
      if (it->second.empty()) children_.erase(it);
    }
  } else {
    root_children_.erase(key);
  }
  children_.erase(key);
  nodes_.erase(key);
}

bool PrefixPool::evictable_subtree(SegmentKey key,
                                   std::vector<SegmentKey>* out) const {
  if (pinned(key)) return false;
  out->push_back(key);
  auto it = children_.find(key);
  if (it != children_.end()) {
    for (SegmentKey c : it->second) {
      if (!evictable_subtree(c, out)) return false;
    }
  }
  return true;
}

std::optional<std::vector<std::pair<SegmentKey, int>>> PrefixPool::evict(
    int instance, long demand) {
  std::vector<std::pair<SegmentKey, int>> evicted;
  if (demand <= 0) return evicted;
  // Snapshot of LRU order; subtree evictions may remove later candidates.
  std::vector<SegmentKey> order(stored_[instance].begin(),
                                stored_[instance].end());
  std::stable_sort(order.begin(), order.end(), [&](SegmentKey a, SegmentKey b) {
    const auto& sa = nodes_.at(a);
    const auto& sb = nodes_.at(b);
    if (sa.last_access != sb.last_access) return sa.last_access < sb.last_access;
    return a < b;
  });
  long freed = 0;
  for (SegmentKey key : order) {
    if (freed >= demand) break;
    auto it = nodes_.find(key);
    if (it == nodes_.end() || !it->second.replicas.count(instance)) continue;
    if (pinned(key)) continue;
    Segment& seg = it->second;
    if (seg.replicas.size() > 1) {
      remove_replica(key, instance);
      evicted.push_back({key, instance});
      ++freed;
      continue;
    }
    // Last copy: with cached descendants the whole subtree must go,
    // deepest-first, so no chain is left dangling.
    std::vector<SegmentKey> subtree;
    if (!evictable_subtree(key, &subtree)) continue;
    std::sort(subtree.begin(), subtree.end(), [&](SegmentKey a, SegmentKey b) {
      return nodes_.at(a).depth > nodes_.at(b).depth;
    });
    for (SegmentKey s : subtree) {
      for (int inst :
           std::vector<int>(nodes_.at(s).replicas.begin(),
                            nodes_.at(s).replicas.end())) {
        evicted.push_back({s, inst});
        if (inst == instance) ++freed;
      }
      erase_node(s);
    }
  }
  if (freed < demand) return std::nullopt;
  total_evictions += static_cast<long>(evicted.size());
  return evicted;
}

bool PrefixPool::check_capacity() const {
  for (const auto& s : stored_) {
    if (static_cast<long>(s.size()) > slot_capacity_) return false;
  }
  return true;
}

bool PrefixPool::check_dedup() const {
  for (SegmentKey key : multi_replica_) {
    if (!heavy_.count(key)) return false;
  }
  return true;
}

bool PrefixPool::audit() const {
  if (!check_capacity()) return false;
  std::size_t replica_total = 0;
  for (const auto& [key, seg] : nodes_) {
    if (seg.key != key || seg.replicas.empty()) return false;
    if (seg.token_count <= 0 || seg.token_count > segment_size_) return false;
    if (seg.parent) {
      auto pit = nodes_.find(*seg.parent);
      if (pit == nodes_.end()) return false;
      if (seg.depth != pit->second.depth + 1) return false;
      if (pit->second.token_count != segment_size_) return false;
      auto cit = children_.find(*seg.parent);
      if (cit == children_.end() || !cit->second.count(key)) return false;
    } else {
      if (seg.depth != 0 || !root_children_.count(key)) return false;
    }
    if ((seg.replicas.size() > 1) != (multi_replica_.count(key) > 0)) {
      return false;
    }
    for (int inst : seg.replicas) {
      if (!stored_[inst].count(key)) return false;
    }
    replica_total += seg.replicas.size();
  }
  std::size_t stored_total = 0;
  for (const auto& s : stored_) {
    stored_total += s.size();
    for (SegmentKey key : s) {
      if (!nodes_.count(key)) return false;
    }
  }
  return stored_total == replica_total;
}

}  // namespace tokenpool
