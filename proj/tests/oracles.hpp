#pragma once

// Independent reference computations used only by the tests.

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

using boost::multiprecision::cpp_int;

/// Largest k with F_Bin(M, i/den)(k) <= j/den, in exact integer arithmetic:
/// F(k) <= j/den  <=>  den * sum_{t<=k} C(M,t) i^t (den-i)^(M-t) <= j * den^M.
inline int binomial_k_exact(unsigned M, unsigned i, unsigned j, unsigned den) {
  const cpp_int total = boost::multiprecision::pow(cpp_int(den), M);
  const cpp_int rhs = cpp_int(j) * total;
  cpp_int term = boost::multiprecision::pow(cpp_int(den - i), M);  // t = 0
  cpp_int sum = 0;
  int k = -1;
  for (unsigned t = 0; t < M; ++t) {
    sum += term;
    if (sum * den > rhs) break;
    k = static_cast<int>(t);
    // C(M,t+1) i^(t+1) (den-i)^(M-t-1) = term * (M-t) * i / ((t+1) (den-i))
    term = term * (M - t) * i / ((t + 1) * (den - i));
  }
  return k;
}

/// min{ tau in scores U {+inf} : #{i : tau_i > tau} <= k }.
inline double argmin_threshold(const std::vector<double>& scores, int k) {
  double best = std::numeric_limits<double>::infinity();
  if (k < 0) return best;
  for (double t : scores) {
    std::size_t outside = 0;
    for (double u : scores) outside += u > t ? 1 : 0;
    if (outside <= static_cast<std::size_t>(k)) best = std::min(best, t);
  }
  return best;
}

/// Composite Simpson rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  if (n % 2) ++n;
  const double h = (b - a) / static_cast<double>(n);
  double acc = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) acc += f(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

/// Ordinary least squares with intercept via the normal equations
/// (Gaussian elimination with partial pivoting).
inline std::vector<double> least_squares(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  const std::size_t p = x.front().size() + 1;
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t r = 0; r < y.size(); ++r) {
    std::vector<double> z{1.0};
    z.insert(z.end(), x[r].begin(), x[r].end());
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) a[i][j] += z[i] * z[j];
      a[i][p] += z[i] * y[r];
    }
  }
  for (std::size_t c = 0; c < p; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < p; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= p; ++j) a[r][j] -= f * a[c][j];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t i = 0; i < p; ++i) beta[i] = a[i][p] / a[i][i];
  return beta;
}

}  // namespace oracle
