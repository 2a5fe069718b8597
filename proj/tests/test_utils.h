// Shared helpers for the test suites: tiny tensor builders, brute-force
// reference computations, and rank statistics.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "headsel/rng.h"
#include "headsel/tensor.h"

namespace headsel::testutil {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = false) {
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Spearman rank correlation; ties get their first-occurrence rank, which is
// fine for the monotone-trend checks it backs.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return v[a] < v[b];
    });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
    return r;
  };
  std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  return num / std::sqrt(dx * dy);
}

// Reference O(n^3) matmul used as the independent oracle.
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk)
        s += a[static_cast<std::size_t>(i) * k + kk] * b[static_cast<std::size_t>(kk) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = s;
    }
  return c;
}

}  // namespace headsel::testutil
