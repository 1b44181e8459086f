#pragma once

#include <map>
#include <set>
#include <vector>

#include "tokenpool/cost_model.hpp"

namespace tokenpool {

// One contiguous token span of a batch's cache traffic: a query span reads
// cached segments on `instance`; a put span writes one new segment there.
struct TouchSpan {
  long tokens = 0;
  int instance = 0;
  bool is_put = false;
};

struct Batch {
  int batch_id = 0;
  std::vector<int> request_ids;
  std::vector<TouchSpan> touches;
};

struct BatchNode {
  int batch_id = 0;
  std::vector<int> request_ids;
  int dop_index = 0;
  long shard_tokens = 0;
  std::set<int> query_set;      // Q(u): instances this node queries
  std::map<int, int> put_map;   // P(u): instance -> new segment count
};

struct DispatchPlan {
  std::vector<int> assignment;  // node index -> instance index
  double total_volume = 0;      // bytes, = -sum of chosen edge weights
};

// Splits a batch into dop contiguous token shards (balanced within +-1) and
// derives each shard's query set and put map from its own touch spans.
std::vector<BatchNode> decompose(const Batch& batch, int dop);

// e(u, v) = -(sum_{k != v, k in Q} 4d + sum_{k != v, k in P} 4d * N_p(u, k)),
// in bytes; colocated traffic costs nothing.
double edge_weight(const BatchNode& node, int instance,
                   const HardwareProfile& p);

// Maximum-total-weight perfect matching of nodes onto instances (Hungarian,
// dummy-padded), ties broken toward the lexicographically smallest
// assignment vector. Throws std::invalid_argument if |nodes| > n.
DispatchPlan assign(const std::vector<BatchNode>& nodes, int n_instances,
                    const HardwareProfile& p);

// O(n^3) minimum-cost square assignment; exposed for reuse and tests.
double hungarian_min_cost(const std::vector<std::vector<double>>& cost,
                          std::vector<int>* row_to_col = nullptr);

}  // namespace tokenpool
