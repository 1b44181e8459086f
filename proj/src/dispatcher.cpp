#include "tokenpool/dispatcher.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace tokenpool {

std::vector<BatchNode> decompose(const Batch& batch, int dop) {
  if (dop < 1) throw std::invalid_argument("decompose: dop >= 1");
  long total = 0;
  for (const auto& t : batch.touches) total += t.tokens;

  std::vector<BatchNode> nodes(dop);
  std::vector<long> shard_size(dop, total / dop);
  for (long i = 0; i < total % dop; ++i) shard_size[i] += 1;
  for (int s = 0; s < dop; ++s) {
    nodes[s].batch_id = batch.batch_id;
    nodes[s].request_ids = batch.request_ids;
    nodes[s].dop_index = s;
    nodes[s].shard_tokens = shard_size[s];
  }
  if (dop == 1) {
    for (const auto& t : batch.touches) {
      if (t.is_put) {
        nodes[0].put_map[t.instance] += 1;
      } else if (t.tokens > 0) {
        nodes[0].query_set.insert(t.instance);
      }
    }
    return nodes;
  }

  // Walk the concatenated token span; a query span touches every shard it
  // overlaps, a put span is attributed to the shard holding its first token.
  std::vector<long> shard_start(dop + 1, 0);
  for (int s = 0; s < dop; ++s) shard_start[s + 1] = shard_start[s] + shard_size[s];
  auto shard_of = [&](long pos) {
    int s = static_cast<int>(std::upper_bound(shard_start.begin(),
                                              shard_start.end(), pos) -
                             shard_start.begin()) - 1;
    return std::min(s, dop - 1);
  };
  long pos = 0;
  for (const auto& t : batch.touches) {
    if (t.tokens <= 0) continue;
    if (t.is_put) {
      nodes[shard_of(pos)].put_map[t.instance] += 1;
    } else {
      const int first = shard_of(pos);
      const int last = shard_of(pos + t.tokens - 1);
      for (int s = first; s <= last; ++s) nodes[s].query_set.insert(t.instance);
    }
    pos += t.tokens;
  }
  return nodes;
}

double edge_weight(const BatchNode& node, int instance,
                   const HardwareProfile& p) {
  const double unit = 2.0 * p.hidden_dim * p.bytes_per_elem;  // "4d" bytes
  double w = 0;
  for (int q : node.query_set) {
    if (q != instance) w -= unit;
  }
  for (const auto& [target, count] : node.put_map) {
    if (target != instance) w -= unit * count;
  }
  return w;
}

double hungarian_min_cost(const std::vector<std::vector<double>>& cost,
                          std::vector<int>* row_to_col) {
  const int n = static_cast<int>(cost.size());
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  if (row_to_col) row_to_col->assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] == 0) continue;
    total += cost[p[j] - 1][j - 1];
    if (row_to_col) (*row_to_col)[p[j] - 1] = j - 1;
  }
  return total;
}

DispatchPlan assign(const std::vector<BatchNode>& nodes, int n_instances,
                    const HardwareProfile& p) {
  const int m = static_cast<int>(nodes.size());
  if (m > n_instances) {
    throw std::invalid_argument("assign: more sub-batch nodes than instances");
  }
  DispatchPlan plan;
  if (m == 0) return plan;
  const int n = n_instances;
  // Cost matrix: real nodes carry -edge_weight, dummy rows are all-zero.
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) cost[i][j] = -edge_weight(nodes[i], j, p);
  }
  const double optimum = hungarian_min_cost(cost);

  // Lexicographic refinement: greedily fix each real node to the smallest
  // instance that keeps the remaining assignment at the optimum. Costs are
  // integer-valued byte counts, so equality is exact.
  plan.assignment.assign(m, -1);
  std::vector<char> taken(n, false);
  double fixed_cost = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      if (taken[j]) continue;
      // Residual problem over rows > i and free columns.
      std::vector<int> cols;
      for (int cidx = 0; cidx < n; ++cidx) {
        if (!taken[cidx] && cidx != j) cols.push_back(cidx);
      }
      const int rn = static_cast<int>(cols.size());
      double rest = 0;
      if (rn > 0) {
        std::vector<std::vector<double>> sub(rn, std::vector<double>(rn, 0.0));
        for (int r = 0; r < rn; ++r) {
          const int row = i + 1 + r;
          for (int cidx = 0; cidx < rn; ++cidx) {
            sub[r][cidx] = row < m ? cost[row][cols[cidx]] : 0.0;
          }
        }
        rest = hungarian_min_cost(sub);
      }
      if (fixed_cost + cost[i][j] + rest == optimum) {
        plan.assignment[i] = j;
        taken[j] = true;
        fixed_cost += cost[i][j];
        break;
      }
    }
    if (plan.assignment[i] < 0) {
      throw std::logic_error("assign: lexicographic refinement failed");
    }
  }
  plan.total_volume = 0;
  for (int i = 0; i < m; ++i) {
    plan.total_volume += cost[i][plan.assignment[i]];
  }
  return plan;
}

}  // namespace tokenpool
