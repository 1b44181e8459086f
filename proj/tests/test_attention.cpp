#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "tokenpool/attention.hpp"

using namespace tokenpool;

namespace {

// Dense softmax attention over the whole key set, max-shifted for
// stability; the reference the segment-merge path must reproduce.
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

}  // namespace

TEST_CASE("single key attends to its value row") {
  std::vector<double> q = {1.0, -2.0, 0.5};
  Matrix k = {{0.3, 0.1, -0.2}};
  Matrix v = {{7.0, 8.0, 9.0}};
  const auto out = finalize(attend_segment(q, k, v));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(out[j] == doctest::Approx(v[0][j]).epsilon(1e-12));
  }
}

TEST_CASE("segment merge equals dense attention: 1000 random cases") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_int_distribution<std::size_t> nkeys(1, 256);
  std::uniform_int_distribution<int> nsegs(1, 8);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = dim(rng);
    const std::size_t n = nkeys(rng);
    const int segs = std::min<int>(nsegs(rng), static_cast<int>(n));
    std::vector<double> q(d);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& x : q) x = g(rng);
    const Matrix k = random_matrix(rng, n, d, 1.0);
    const Matrix v = random_matrix(rng, n, d, 1.0);
    const auto truth = dense_attention(q, k, v);

    // Random segment boundaries.
    std::vector<std::size_t> cuts = {0, n};
    std::uniform_int_distribution<std::size_t> cut(1, n);
    while (static_cast<int>(cuts.size()) < segs + 1) cuts.push_back(cut(rng));
    std::sort(cuts.begin(), cuts.end());
    AttentionPartial acc;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
      if (cuts[s] == cuts[s + 1]) continue;
      Matrix ks(k.begin() + cuts[s], k.begin() + cuts[s + 1]);
      Matrix vs(v.begin() + cuts[s], v.begin() + cuts[s + 1]);
      acc = merge(acc, attend_segment(q, ks, vs));
    }
    const auto got = finalize(acc);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(got[j] == doctest::Approx(truth[j]).epsilon(1e-6));
    }
  }
}

TEST_CASE("merge is associative within 1e-10") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 16;
    std::vector<double> q(d);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& x : q) x = g(rng);
    AttentionPartial parts[3];
    for (auto& p : parts) {
      p = attend_segment(q, random_matrix(rng, 8, d, 2.0),
                         random_matrix(rng, 8, d, 2.0));
    }
    const auto left = finalize(merge(merge(parts[0], parts[1]), parts[2]));
    const auto right = finalize(merge(parts[0], merge(parts[1], parts[2])));
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(left[j] ==
            doctest::Approx(right[j]).epsilon(1e-10).scale(1.0));
    }
  }
}

TEST_CASE("merge with an empty partial is the identity") {
  std::vector<double> q = {0.5, 0.5};
  const auto p = attend_segment(q, {{1.0, 0.0}, {0.0, 1.0}},
                                {{2.0, 3.0}, {4.0, 5.0}});
  AttentionPartial none;
  const auto a = merge(none, p);
  const auto b = merge(p, none);
  CHECK(a.output == p.output);
  CHECK(a.normalizer == p.normalizer);
  CHECK(b.output == p.output);
  CHECK(b.normalizer == p.normalizer);
}

TEST_CASE("extreme logits stay finite and correct") {
  std::mt19937_64 rng(13);
  const std::size_t d = 8;
  std::vector<double> q(d, 40.0);  // logits on the order of +-1e4 / sqrt(d)
  const Matrix k = random_matrix(rng, 32, d, 30.0);
  const Matrix v = random_matrix(rng, 32, d, 1.0);
  const auto truth = dense_attention(q, k, v);
  AttentionPartial acc;
  for (std::size_t i = 0; i < k.size(); i += 4) {
    Matrix ks(k.begin() + i, k.begin() + i + 4);
    Matrix vs(v.begin() + i, v.begin() + i + 4);
    acc = merge(acc, attend_segment(q, ks, vs));
  }
  const auto got = finalize(acc);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(std::isfinite(got[j]));
    CHECK(got[j] == doctest::Approx(truth[j]).epsilon(1e-6));
  }
}

TEST_CASE("error paths") {
  AttentionPartial none;
  CHECK_THROWS_AS(finalize(none), std::invalid_argument);
  std::vector<double> q = {1.0};
  CHECK_THROWS_AS(attend_segment(q, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(attend_segment(q, {{1.0, 2.0}}, {{1.0, 2.0}}),
                  std::invalid_argument);
  const auto a = attend_segment(q, {{1.0}}, {{1.0}});
  std::vector<double> q2 = {1.0, 2.0};
  const auto b = attend_segment(q2, {{1.0, 0.0}}, {{1.0, 0.0}});
  CHECK_THROWS_AS(merge(a, b), std::invalid_argument);
}
