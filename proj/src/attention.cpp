#include "tokenpool/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tokenpool {

AttentionPartial attend_segment(const std::vector<double>& q, const Matrix& k,
                                const Matrix& v) {
  if (k.empty() || k.size() != v.size()) {
    throw std::invalid_argument("attend_segment: K and V need matching rows");
  }
  const std::size_t d = q.size();
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (k[i].size() != d || v[i].size() != d) {
      throw std::invalid_argument("attend_segment: dimension mismatch");
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> logits(k.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k.size(); ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) dot += q[j] * k[i][j];
    logits[i] = dot * scale;
    max_logit = std::max(max_logit, logits[i]);
  }
  AttentionPartial p;
  p.output.assign(d, 0.0);
  p.running_max = max_logit;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double w = std::exp(logits[i] - max_logit);
    p.normalizer += w;
    for (std::size_t j = 0; j < d; ++j) p.output[j] += w * v[i][j];
  }
  return p;
}

AttentionPartial merge(const AttentionPartial& a, const AttentionPartial& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.output.size() != b.output.size()) {
    throw std::invalid_argument("merge: dimension mismatch");
  }
  AttentionPartial out;
  out.running_max = std::max(a.running_max, b.running_max);
  const double wa = std::exp(a.running_max - out.running_max);
  const double wb = std::exp(b.running_max - out.running_max);
  out.normalizer = a.normalizer * wa + b.normalizer * wb;
  out.output.resize(a.output.size());
  for (std::size_t j = 0; j < a.output.size(); ++j) {
    out.output[j] = a.output[j] * wa + b.output[j] * wb;
  }
  return out;
}

std::vector<double> finalize(const AttentionPartial& p) {
  if (p.empty()) throw std::invalid_argument("finalize: empty attention");
  std::vector<double> out(p.output.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = p.output[j] / p.normalizer;
  }
  return out;
}

}  // namespace tokenpool
