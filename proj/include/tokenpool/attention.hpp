#pragma once

#include <vector>

namespace tokenpool {

// Partial attention state for one contiguous key/value segment: the
// un-normalized weighted value sum (shifted by running_max), the max logit
// seen, and the softmax normalizer. Partials from disjoint segments merge
// exactly into the monolithic attention result.
struct AttentionPartial {
  std::vector<double> output;
  double running_max = 0;
  double normalizer = 0;  // 0 means "attended nothing yet"

  bool empty() const { return normalizer == 0; }
};

using Matrix = std::vector<std::vector<double>>;

// Online-softmax pass of q over one segment's keys/values (n x d each).
AttentionPartial attend_segment(const std::vector<double>& q, const Matrix& k,
                                const Matrix& v);

// Numerically stable reduction of two partials.
AttentionPartial merge(const AttentionPartial& a, const AttentionPartial& b);

// output / normalizer; throws on an empty partial.
std::vector<double> finalize(const AttentionPartial& p);

}  // namespace tokenpool
