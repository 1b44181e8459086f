#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "tokenpool/hash.hpp"

namespace tokenpool {

using SegmentKey = std::uint64_t;

struct Segment {
  SegmentKey key = 0;
  std::optional<SegmentKey> parent;
  int depth = 0;          // segment index from root
  long token_count = 0;   // in (0, segment_size]
  std::uint64_t access_count = 0;
  std::int64_t last_access = -1;  // iteration index of last touch
  std::set<int> replicas;         // instance indices, ordered for determinism
};

struct ChainLink {
  SegmentKey key = 0;
  long token_count = 0;
};

struct ReplicationAction {
  SegmentKey key = 0;
  int from = -1;
  int to = -1;  // -1: no eligible target, action skipped
};

// Segment-level prefix cache pool: global deduplicated prefix tree plus the
// instance directory, heavy-hitter replication, power-of-two-choices replica
// selection and global LRU eviction.
class PrefixPool {
 public:
  PrefixPool(int n_instances, long slot_capacity, long segment_size);

  // --- chain helpers -------------------------------------------------------
  // Splits tokens into ceil(len/C) segments and returns the key/size chain.
  std::vector<ChainLink> key_chain(std::span<const TokenId> tokens) const;

  // --- mutating operations -------------------------------------------------
  // Inserts (deduplicating) the chain for `tokens`; new segments go to their
  // hash home, evicting if full. nullopt: capacity exhausted (all pinned).
  std::optional<std::vector<SegmentKey>> insert_prefix(
      std::span<const TokenId> tokens, std::int64_t now);
  // forced_home places new segments on one instance (strict-locality
  // policy), spilling to the emptiest other instance when it cannot make
  // room; `spilled` counts segments that landed off the forced instance.
  std::optional<std::vector<SegmentKey>> insert_chain(
      const std::vector<ChainLink>& chain, std::int64_t now,
      std::optional<int> forced_home = std::nullopt, long* spilled = nullptr);

  // Power-of-two-choices selection among a segment's replicas; touches the
  // segment (access_count, last_access) and the chosen instance's load.
  int select_replica(SegmentKey key, std::mt19937_64& rng, std::int64_t now);

  // Replicates heavy hitters away from overloaded instances and prunes
  // replicas of segments that fell out of the heavy set.
  std::vector<ReplicationAction> rebalance(std::int64_t now);

  // Frees >= demand slots on `instance` in ascending last_access order.
  // Returns the evicted (key, instance) pairs, nullopt if demand cannot be
  // met (remaining replicas pinned).
  std::optional<std::vector<std::pair<SegmentKey, int>>> evict(int instance,
                                                               long demand);

  void pin(SegmentKey key);
  void unpin(SegmentKey key);
  void decay_loads();  // apply one iteration of exponential load decay
  void add_load(int instance, double amount);

  // --- queries -------------------------------------------------------------
  struct MatchResult {
    std::vector<SegmentKey> chain;
    long hit_tokens = 0;
  };
  // Longest cached whole-segment chain whose tokens prefix the input.
  MatchResult match_prefix(std::span<const TokenId> tokens) const;
  // Same, but against a precomputed key chain (no partial-tail cross match).
  MatchResult match_chain(const std::vector<ChainLink>& chain) const;

  static int home_instance(SegmentKey key, int n);

  // Top `budget` full segments by access_count via pruned BFS from the
  // roots; sorted by count descending, ties by key ascending.
  std::vector<SegmentKey> find_heavy_hitters(std::size_t budget) const;

  std::size_t heavy_hitter_budget() const;  // ceil(N * ln N), 0 for N = 1

  bool contains(SegmentKey key) const { return nodes_.count(key) > 0; }
  const Segment* find(SegmentKey key) const;
  std::size_t size() const { return nodes_.size(); }
  int n_instances() const { return n_instances_; }
  long slot_capacity() const { return slot_capacity_; }
  long segment_size() const { return segment_size_; }
  const std::set<SegmentKey>& stored(int instance) const {
    return stored_[instance];
  }
  double access_load(int instance) const { return access_load_[instance]; }
  const std::set<SegmentKey>& heavy_set() const { return heavy_; }
  const std::set<SegmentKey>& root_children() const { return root_children_; }
  const std::set<SegmentKey>& children(SegmentKey key) const;
  bool pinned(SegmentKey key) const { return pinned_.count(key) > 0; }

  double overload_delta = 0.2;          // overload: load > (1+delta)*mean
  double decay_half_life = 32;          // iterations
  long total_evictions = 0;             // replica removals across the run

  // --- invariant checks ----------------------------------------------------
  // O(N + multi-replica set): capacity bound and "non-heavy segments have
  // exactly one replica".
  bool check_capacity() const;
  bool check_dedup() const;
  // Full-scan structural audit (parent links, depths, replica/stored
  // agreement); used by tests.
  bool audit() const;

 private:
  bool ensure_slot(int instance);
  void remove_replica(SegmentKey key, int instance);
  void erase_node(SegmentKey key);
  bool evictable_subtree(SegmentKey key, std::vector<SegmentKey>* out) const;

  int n_instances_;
  long slot_capacity_;
  long segment_size_;
  std::unordered_map<SegmentKey, Segment> nodes_;
  std::unordered_map<SegmentKey, std::set<SegmentKey>> children_;
  std::set<SegmentKey> root_children_;
  std::vector<std::set<SegmentKey>> stored_;
  std::vector<double> access_load_;
  std::unordered_map<SegmentKey, int> pinned_;  // refcounted
  std::set<SegmentKey> heavy_;          // as of the last rebalance
  std::set<SegmentKey> multi_replica_;  // segments with > 1 replica
};

}  // namespace tokenpool
