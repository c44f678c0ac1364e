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

#ifndef WCPS__STATS_HPP_
#define WCPS__STATS_HPP_

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "wcps/error.hpp"
#include "wcps/random.hpp"

namespace wcps
{
/// Largest mean the Poisson routines accept.
inline constexpr double kMaxLambda = 1e9;

/// P(X = x) for X ~ Poisson(lambda); zero for negative x.
inline double poisson_pmf(std::int64_t x, double lambda)
{
  if (!(lambda > 0.0)) {
    if (lambda == 0.0) {
      return x == 0 ? 1.0 : 0.0;
    }
    throw ParameterError("poisson_pmf: lambda must be positive");
  }
  if (x < 0) {
    return 0.0;
  }
  // d/dlambda P(x+1, lambda) = lambda^x e^-lambda / x!, evaluated without
  // forming either factor separately.
  return boost::math::gamma_p_derivative(static_cast<double>(x) + 1.0, lambda);
}

/// P(X <= x).
inline double poisson_cdf(std::int64_t x, double lambda)
{
  if (x < 0) {
    return 0.0;
  }
  if (lambda == 0.0) {
    return 1.0;
  }
  return boost::math::gamma_q(static_cast<double>(x) + 1.0, lambda);
}

/// P(X > x), accurate deep in the upper tail.
inline double poisson_sf(std::int64_t x, double lambda)
{
  if (x < 0) {
    return 1.0;
  }
  if (lambda == 0.0) {
    return 0.0;
  }
  return boost::math::gamma_p(static_cast<double>(x) + 1.0, lambda);
}

/// base^n by repeated squaring.
inline double pow_by_squaring(double base, std::uint64_t n)
{
  double r = 1.0;
  while (n > 0) {
    if (n & 1U) {
      r *= base;
    }
    base *= base;
    n >>= 1U;
  }
  return r;
}

/// F^n given the complement sf = 1 - F. Close to 1 the complement carries
/// the information, so go through log1p instead of rounding F first.
inline double cdf_power(double cdf, double sf, std::uint64_t n)
{
  if (n == 0) {
    return 1.0;
  }
  if (sf < 0.5) {
    return std::exp(static_cast<double>(n) * std::log1p(-sf));
  }
  return pow_by_squaring(cdf, n);
}

/// P(max of n iid Poisson(lambda) = x) = F(x)^n - F(x-1)^n.
inline double max_order_pmf(std::int64_t x, double lambda, std::uint64_t n)
{
  if (n == 0) {
    throw ParameterError("max_order_pmf: N must be >= 1");
  }
  if (x < 0) {
    return 0.0;
  }
  if (n == 1) {
    return poisson_pmf(x, lambda);
  }
  const double f = poisson_pmf(x, lambda);
  if (f == 0.0) {
    return 0.0;
  }
  const double F = poisson_cdf(x, lambda);
  const double Fn = cdf_power(F, poisson_sf(x, lambda), n);
  // F^n - (F - f)^n = F^n (1 - (1 - f/F)^n)
  return Fn * -std::expm1(static_cast<double>(n) * std::log1p(-f / F));
}

/// P(max of n iid Poisson(lambda) <= x).
inline double max_order_cdf(std::int64_t x, double lambda, std::uint64_t n)
{
  if (x < 0) {
    return 0.0;
  }
  return cdf_power(poisson_cdf(x, lambda), poisson_sf(x, lambda), n);
}

/// Smallest x with P(max > x) <= alpha.
inline std::int64_t max_order_quantile(double lambda, std::uint64_t n, double alpha)
{
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ParameterError("max_order_quantile: alpha must lie in (0, 1)");
  }
  auto exceed = [&](std::int64_t x) {
    // 1 - F^n, kept accurate when F^n is close to 1
    const double sf = poisson_sf(x, lambda);
    return sf < 0.5 ? -std::expm1(static_cast<double>(n) * std::log1p(-sf))
                    : 1.0 - cdf_power(1.0 - sf, sf, n);
  };
  std::int64_t lo = -1;
  std::int64_t hi = static_cast<std::int64_t>(lambda + 10.0 * std::sqrt(lambda) + 20.0);
  while (exceed(hi) > alpha) {
    lo = hi;
    hi = 2 * hi + 1;
  }
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    (exceed(mid) > alpha ? lo : hi) = mid;
  }
  return hi;
}

/// E[max] = sum_x P(max > x).
inline double max_order_mean(double lambda, std::uint64_t n)
{
  double mean = 0.0;
  for (std::int64_t x = 0;; ++x) {
    const double sf = poisson_sf(x, lambda);
    const double term = sf < 0.5 ? -std::expm1(static_cast<double>(n) * std::log1p(-sf))
                                 : 1.0 - pow_by_squaring(1.0 - sf, n);
    mean += term;
    if (static_cast<double>(x) > lambda && term < 1e-17 * std::max(1.0, mean)) {
      return mean;
    }
  }
}

inline std::int64_t max_order_mode(double lambda, std::uint64_t n)
{
  const auto start = static_cast<std::int64_t>(lambda);
  std::int64_t best = start;
  double best_p = max_order_pmf(start, lambda, n);
  // The pmf is unimodal; walk uphill from lambda.
  for (int dir : {1, -1}) {
    for (std::int64_t x = start + dir; x >= 0; x += dir) {
      const double p = max_order_pmf(x, lambda, n);
      if (p <= best_p) {
        break;
      }
      best_p = p;
      best = x;
    }
  }
  return best;
}

namespace detail
{
inline double log_normal_cdf(double z)
{
  // log(Phi(z)) via the upper tail where it matters
  const double tail = 0.5 * std::erfc(z / std::sqrt(2.0));
  return tail < 0.5 ? std::log1p(-tail) : std::log(0.5 * std::erfc(-z / std::sqrt(2.0)));
}

inline double normal_density(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
}  // namespace detail

/// Density of the max of n iid Normal(lambda, sqrt(lambda)) variates.
inline double max_order_pmf_normal(double x, double lambda, std::uint64_t n)
{
  if (!(lambda > 0.0)) {
    throw ParameterError("max_order_pmf_normal: lambda must be positive");
  }
  if (n == 0) {
    throw ParameterError("max_order_pmf_normal: N must be >= 1");
  }
  const double sigma = std::sqrt(lambda);
  const double z = (x - lambda) / sigma;
  const double log_f = std::log(static_cast<double>(n)) - 0.5 * z * z -
                       0.5 * std::log(2.0 * M_PI) - std::log(sigma);
  return std::exp(log_f + static_cast<double>(n - 1) * detail::log_normal_cdf(z));
}

inline double max_order_mode_normal(double lambda, std::uint64_t n)
{
  const double sigma = std::sqrt(lambda);
  auto neg = [&](double x) { return -max_order_pmf_normal(x, lambda, n); };
  const auto r = boost::math::tools::brent_find_minima(neg, lambda - sigma, lambda + 10.0 * sigma, 52);
  return r.first;
}

inline double max_order_mean_normal(double lambda, std::uint64_t n)
{
  const double sigma = std::sqrt(lambda);
  auto integrand = [&](double x) { return x * max_order_pmf_normal(x, lambda, n); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
    integrand, lambda - 12.0 * sigma, lambda + 12.0 * sigma, 15, 1e-12);
}

/// Bin-level model of one correlation: N bins of Poisson(lambda_a) noise, one
/// of which also holds nu * c_e * T / xi excess coincidences.
struct SuccessModelParams
{
  int q = 20;
  double delta_t_s = 1e-6;
  double s1 = 100e3;
  double s2 = 100e3;
  double c = 650.0;  ///< total excess rate, or the per-bin c_e if tau_c_s is unset
  double nu = 0.5;
  double du = 0.0;
  std::optional<double> tau_c_s;  ///< ties c_e to c via the centered-bin capture

  std::uint64_t n() const { return std::uint64_t{1} << q; }
  double duration_s() const { return static_cast<double>(n()) * delta_t_s; }
  double lambda_a() const { return s1 * s2 * delta_t_s * duration_s(); }
  double xi() const { return std::max(1.0, static_cast<double>(n()) * std::abs(du)); }
  double c_e() const
  {
    return tau_c_s ? c * -std::expm1(-delta_t_s / *tau_c_s) : c;
  }
  double signal_excess() const { return nu * c_e() * duration_s() / xi(); }
  double lambda_s() const { return lambda_a() + signal_excess(); }

  void validate() const
  {
    if (q < 0 || q > 40) {
      throw ParameterError("success model: q must lie in [0, 40]");
    }
    if (!(delta_t_s > 0.0)) {
      throw ParameterError("success model: delta_t must be positive");
    }
    if (!(s1 >= 0.0 && s2 >= 0.0 && c >= 0.0)) {
      throw ParameterError("success model: rates must be non-negative");
    }
    if (!(nu >= 0.5 && nu <= 1.0)) {
      throw ParameterError("success model: nu must lie in [0.5, 1]");
    }
    if (tau_c_s && !(*tau_c_s > 0.0)) {
      throw ParameterError("success model: tau_c must be positive");
    }
    if (lambda_s() > kMaxLambda) {
      throw RangeError("success model: bin mean exceeds the supported range (1e9)");
    }
  }
};

/// P(signal bin strictly exceeds all N-1 noise bins); ties fail.
inline double success_probability(const SuccessModelParams & p)
{
  p.validate();
  const double la = p.lambda_a();
  const double ls = p.lambda_s();
  const std::uint64_t others = p.n() - 1;
  if (ls == 0.0) {
    return others == 0 ? 1.0 : 0.0;
  }
  const double width = 40.0 * std::sqrt(ls) + 40.0;
  const auto x_lo = static_cast<std::int64_t>(std::max(1.0, std::floor(ls - width)));
  const auto x_hi = static_cast<std::int64_t>(std::ceil(ls + width));
  double total = 0.0;
  for (std::int64_t x = x_lo; x <= x_hi; ++x) {
    const double f = poisson_pmf(x, ls);
    if (f == 0.0) {
      continue;
    }
    const double below = la == 0.0 ? 1.0 : cdf_power(poisson_cdf(x - 1, la), poisson_sf(x - 1, la), others);
    total += f * below;
  }
  return std::min(1.0, total);
}

/// Same model with both the noise and the signal bins taken as normal.
inline double success_probability_normal(const SuccessModelParams & p)
{
  p.validate();
  const double la = p.lambda_a();
  const double ls = p.lambda_s();
  if (!(la > 0.0)) {
    throw ParameterError("success_probability_normal: lambda_a must be positive");
  }
  const double sa = std::sqrt(la);
  const double ss = std::sqrt(ls);
  const double others = static_cast<double>(p.n() - 1);
  auto integrand = [&](double x) {
    const double zs = (x - ls) / ss;
    return detail::normal_density(zs) / ss *
           std::exp(others * detail::log_normal_cdf((x - la) / sa));
  };
  // Split at the noise edge, where the steep Phi^(N-1) front sits.
  const double edge = la + sa * std::sqrt(2.0 * std::log(std::max(2.0, others)));
  const double lo = ls - 14.0 * ss;
  const double hi = ls + 14.0 * ss;
  double total = 0.0;
  std::vector<double> cuts{lo};
  for (double c : {edge - 3.0 * sa, edge, edge + 3.0 * sa}) {
    if (c > lo && c < hi) {
      cuts.push_back(c);
    }
  }
  cuts.push_back(hi);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, cuts[i], cuts[i + 1], 15, 1e-12);
  }
  return std::clamp(total, 0.0, 1.0);
}

struct McEstimate
{
  double p = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::uint64_t successes = 0;
  std::uint64_t trials = 0;

  double sigma() const
  {
    return trials ? std::sqrt(std::max(p * (1.0 - p), 1.0 / static_cast<double>(trials)) /
                              static_cast<double>(trials))
                  : 0.0;
  }
};

/// Wilson score interval at z sigma.
inline McEstimate wilson(std::uint64_t k, std::uint64_t n, double z = 1.959963984540054)
{
  McEstimate e;
  e.successes = k;
  e.trials = n;
  if (n == 0) {
    return e;
  }
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (ph + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z2 / (4.0 * nn * nn)) / denom;
  e.p = ph;
  e.ci_low = std::max(0.0, centre - half);
  e.ci_high = std::min(1.0, centre + half);
  return e;
}

/// Monte Carlo of the bin-level model. Trial i draws from its own generator
/// seeded by derive_seed(seed, i). Up to kExplicitBins noise bins are drawn
/// one by one; beyond that only the number of noise bins reaching the signal
/// count is drawn, which has the same distribution.
inline McEstimate success_probability_mc(
  const SuccessModelParams & p, std::uint64_t trials, std::uint64_t seed)
{
  constexpr std::uint64_t kExplicitBins = 4096;
  p.validate();
  if (trials == 0) {
    throw ParameterError("success_probability_mc: trials must be >= 1");
  }
  const double la = p.lambda_a();
  const double ls = p.lambda_s();
  const std::uint64_t others = p.n() - 1;
  std::poisson_distribution<std::int64_t> signal(std::max(ls, 1e-300));
  std::poisson_distribution<std::int64_t> noise(std::max(la, 1e-300));
  // P(noise >= s) cached by s; s stays within a few hundred sigma of ls.
  std::vector<double> tail_cache;
  std::int64_t tail_base = 0;
  auto tail = [&](std::int64_t s) {
    if (tail_cache.empty()) {
      tail_base = std::max<std::int64_t>(0, s - 4096);
      tail_cache.assign(8192, -1.0);
    }
    const std::int64_t i = s - tail_base;
    if (i < 0 || i >= static_cast<std::int64_t>(tail_cache.size())) {
      return poisson_sf(s - 1, la);
    }
    double & v = tail_cache[static_cast<std::size_t>(i)];
    if (v < 0.0) {
      v = poisson_sf(s - 1, la);
    }
    return v;
  };
  std::uint64_t wins = 0;
  for (std::uint64_t i = 0; i < trials; ++i) {
    SplitMix64 rng(derive_seed(seed, i));
    signal.reset();
    noise.reset();
    const std::int64_t s = ls > 0.0 ? signal(rng) : 0;
    bool win = true;
    if (others == 0) {
      win = true;
    } else if (la == 0.0) {
      win = s > 0;
    } else if (others <= kExplicitBins) {
      for (std::uint64_t k = 0; k < others && win; ++k) {
        win = noise(rng) < s;
      }
    } else {
      const double q = tail(s);
      if (q >= 1.0) {
        win = false;
      } else if (q > 0.0) {
        std::binomial_distribution<std::uint64_t> reach(others, q);
        win = reach(rng) == 0;
      }
    }
    wins += win ? 1U : 0U;
  }
  return wilson(wins, trials);
}

/// Legacy metric S = c_e sqrt(N / (s1 s2)).
inline double significance(double c_e, double n, double s1, double s2)
{
  if (!(c_e > 0.0 && n > 0.0 && s1 > 0.0 && s2 > 0.0)) {
    throw ParameterError("significance: arguments must be positive");
  }
  return c_e * std::sqrt(n / (s1 * s2));
}

struct SurfacePoint
{
  int q = 0;
  std::int64_t delta_t_ps = 0;
  double prob = 0.0;
  McEstimate mc;
  std::optional<double> prob_normal;
};

inline void write_surface_csv(std::ostream & os, const std::vector<SurfacePoint> & points)
{
  const bool normal = std::any_of(
    points.begin(), points.end(), [](const SurfacePoint & p) { return p.prob_normal.has_value(); });
  os << "q,delta_t_ps,prob,prob_mc,ci_low,ci_high" << (normal ? ",prob_normal" : "") << '\n';
  os << std::setprecision(10);
  for (const auto & p : points) {
    os << p.q << ',' << p.delta_t_ps << ',' << p.prob << ',';
    if (p.mc.trials > 0) {
      os << p.mc.p << ',' << p.mc.ci_low << ',' << p.mc.ci_high;
    } else {
      os << ",,";
    }
    if (normal) {
      os << ',';
      if (p.prob_normal) {
        os << *p.prob_normal;
      }
    }
    os << '\n';
  }
}

}  // namespace wcps

#endif  // WCPS__STATS_HPP_
