// Copyright 2026 The wcps Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Independent reference implementations for the tests. Nothing here calls
// into the library's numerical code paths.

#ifndef WCPS_TESTS__ORACLES_HPP_
#define WCPS_TESTS__ORACLES_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wcps/timetag.hpp"

namespace oracle
{
using wcps::TimeTick;

/// c[k] = sum_i a[i] b[(i + k) mod N], term by term.
inline std::vector<std::int64_t> direct_xcorr(
  std::span<const std::uint32_t> a, std::span<const std::uint32_t> b)
{
  const std::size_t n = a.size();
  std::vector<std::int64_t> c(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] == 0) {
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (b[j] != 0) {
        c[(j + n - i) % n] += std::int64_t{a[i]} * b[j];
      }
    }
  }
  return c;
}

/// Histogram of every pair's tau = t_a - t_b over [lo, lo + n*dt).
inline std::vector<std::int64_t> all_pairs_histogram(
  std::span<const TimeTick> a, std::span<const TimeTick> b, std::int64_t lo, std::int64_t dt,
  std::size_t n)
{
  std::vector<std::int64_t> h(n, 0);
  const std::int64_t hi = lo + dt * static_cast<std::int64_t>(n);
  for (const TimeTick x : a) {
    for (const TimeTick y : b) {
      const std::int64_t tau = x.count() - y.count();
      if (tau >= lo && tau < hi) {
        ++h[static_cast<std::size_t>((tau - lo) / dt)];
      }
    }
  }
  return h;
}

/// Bin counts by direct floor division with circular fold.
inline std::vector<std::uint32_t> fold_bins(
  std::span<const TimeTick> t, std::int64_t origin, std::int64_t dt, std::size_t n)
{
  std::vector<std::uint32_t> out(n, 0);
  for (const TimeTick x : t) {
    const long double rel = static_cast<long double>(x.count() - origin) / dt;
    auto k = static_cast<std::int64_t>(std::floor(rel));
    k %= static_cast<std::int64_t>(n);
    if (k < 0) {
      k += static_cast<std::int64_t>(n);
    }
    ++out[static_cast<std::size_t>(k)];
  }
  return out;
}

inline double poisson_pmf(std::int64_t x, double lambda)
{
  if (x < 0) {
    return 0.0;
  }
  const auto xd = static_cast<long double>(x);
  return static_cast<double>(
    std::exp(xd * std::log(static_cast<long double>(lambda)) - lambda - std::lgamma(xd + 1.0L)));
}

inline double poisson_cdf(std::int64_t x, double lambda)
{
  long double s = 0.0L;
  for (std::int64_t k = 0; k <= x; ++k) {
    s += poisson_pmf(k, lambda);
  }
  return static_cast<double>(s);
}

/// P(max of n iid Poisson(lambda) = x) by summing the joint pmf over every
/// n-tuple with components up to `cap`. Only for n <= 3.
inline double enumerated_max_pmf(std::int64_t x, double lambda, int n, std::int64_t cap)
{
  std::vector<double> p(static_cast<std::size_t>(cap + 1));
  for (std::int64_t k = 0; k <= cap; ++k) {
    p[static_cast<std::size_t>(k)] = poisson_pmf(k, lambda);
  }
  long double s = 0.0L;
  if (n == 1) {
    return x <= cap ? p[static_cast<std::size_t>(x)] : 0.0;
  }
  for (std::int64_t i = 0; i <= cap; ++i) {
    for (std::int64_t j = 0; j <= cap; ++j) {
      if (n == 2) {
        if (std::max(i, j) == x) {
          s += static_cast<long double>(p[i]) * p[j];
        }
        continue;
      }
      for (std::int64_t k = 0; k <= cap; ++k) {
        if (std::max({i, j, k}) == x) {
          s += static_cast<long double>(p[i]) * p[j] * p[k];
        }
      }
    }
  }
  return static_cast<double>(s);
}

/// Least-squares slope of y on x.
inline double ls_slope(std::span<const double> x, std::span<const double> y)
{
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return static_cast<double>(sxy / sxx);
}

// 30-digit evaluations (mpmath), frozen. max_order rows are
// [F(x)]^N - [F(x) - f(x)]^N.
struct PmfRef
{
  std::int64_t x;
  double lambda;
  double value;
};
inline constexpr PmfRef kPoissonRef[] = {
  {0, 1.0, 0.3678794411714423216},
  {10000, 10000.0, 0.0039893895589628256487},
  {3, 0.5, 0.012636055410679862992},
  {120, 100.0, 0.0055610648865130010476},
  {1000, 1000.0, 0.012614611348721499718},
  {950, 1000.0, 0.0036296190663045958075},
};

struct MaxOrderRef
{
  std::int64_t x;
  double lambda;
  std::uint64_t n;
  double value;
};
inline constexpr MaxOrderRef kMaxOrderRef[] = {
  {1, 1.0, 2, 0.40600584970983807568},
  {4, 1.0, 1024, 0.023410795180046648307},
  {9, 1.0, 1u << 20, 0.58240781694460490897},
  {45, 10.0, 1u << 20, 3.9796349199589642927e-10},
  {25, 10.0, 1u << 20, 8.8816967689971240271e-9},
  {1160, 1000.0, 1u << 20, 0.042175846670863084688},
  {1180, 1000.0, 1u << 20, 0.0026964386934009324491},
  {3, 0.1, 1u << 20, 0.01770858925248330771},
  {5, 0.1, 1u << 20, 0.075919411585343234963},
  {14, 4.0, 1024, 0.054983177461065626289},
  {6, 1.0, 1u << 20, 1.2335906423351863297e-38},
};

}  // namespace oracle

#endif  // WCPS_TESTS__ORACLES_HPP_
