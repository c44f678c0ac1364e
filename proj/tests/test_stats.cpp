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


#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "wcps/stats.hpp"

using namespace wcps;

namespace
{
double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

SuccessModelParams fig3(int q, double dt)
{
  SuccessModelParams p;
  p.q = q;
  p.delta_t_s = dt;
  p.s1 = p.s2 = 100e3;
  p.c = 650;
  p.nu = 0.5;
  p.du = 50e-9;
  return p;
}
}  // namespace

TEST(PoissonPmf, FrozenReferences)
{
  for (const auto & r : oracle::kPoissonRef) {
    EXPECT_LT(rel(poisson_pmf(r.x, r.lambda), r.value), 1e-12) << r.x << " " << r.lambda;
  }
}

TEST(PoissonPmf, AgreesWithLogGammaOracle)
{
  for (const double lambda : {0.01, 0.5, 3.0, 47.0, 900.0}) {
    for (std::int64_t x = 0; x < static_cast<std::int64_t>(lambda * 3 + 20); ++x) {
      const double o = oracle::poisson_pmf(x, lambda);
      if (o > 1e-300) {
        EXPECT_LT(rel(poisson_pmf(x, lambda), o), 1e-10) << x << " " << lambda;
      }
    }
  }
}

TEST(PoissonPmf, ConventionsAndErrors)
{
  EXPECT_EQ(poisson_pmf(-1, 2.0), 0.0);
  EXPECT_THROW(poisson_pmf(1, -1.0), ParameterError);
  EXPECT_EQ(poisson_pmf(0, 0.0), 1.0);
}

TEST(PoissonPmf, TailBoundNormalization)
{
  for (const double lambda : {0.1, 1.0, 10.0, 1e3, 1e4, 1e6}) {
    double s = 0;
    const auto top = static_cast<std::int64_t>(lambda + 20 * std::sqrt(lambda));
    for (std::int64_t x = 0; x <= top; ++x) {
      s += poisson_pmf(x, lambda);
    }
    EXPECT_GE(s, 1 - 1e-9) << lambda;
    EXPECT_LE(s, 1 + 1e-9) << lambda;
  }
}

TEST(PoissonCdf, ComplementsSum)
{
  for (const double lambda : {0.3, 12.0, 5000.0}) {
    for (std::int64_t x : {0, 3, 11, 5000, 5100}) {
      EXPECT_NEAR(poisson_cdf(x, lambda) + poisson_sf(x, lambda), 1.0, 1e-14);
      if (lambda < 100) {
        EXPECT_NEAR(poisson_cdf(x, lambda), oracle::poisson_cdf(x, lambda), 1e-13);
      }
    }
  }
}

TEST(MaxOrder, FrozenReferences)
{
  for (const auto & r : oracle::kMaxOrderRef) {
    EXPECT_LT(rel(max_order_pmf(r.x, r.lambda, r.n), r.value), 1e-9)
      << r.x << " " << r.lambda << " " << r.n;
  }
}

TEST(MaxOrder, SingleBinIsPoisson)
{
  for (const double lambda : {0.1, 1.0, 10.0, 1e3}) {
    for (std::int64_t x = 0; x < 40; x += 3) {
      const double p = poisson_pmf(x, lambda);
      EXPECT_NEAR(max_order_pmf(x, lambda, 1), p, 1e-12 * std::max(p, 1e-300));
    }
  }
}

TEST(MaxOrder, TwoBinsHandValue)
{
  EXPECT_NEAR(max_order_pmf(1, 1.0, 2), 3.0 * std::exp(-2.0), 1e-12);
}

TEST(MaxOrder, EnumerationOracleForTwoAndThreeBins)
{
  for (const double lambda : {0.7, 4.0}) {
    for (const int n : {2, 3}) {
      for (std::int64_t x = 0; x < 12; ++x) {
        const double o = oracle::enumerated_max_pmf(x, lambda, n, 40);
        EXPECT_NEAR(max_order_pmf(x, lambda, n), o, 1e-13) << x << " " << lambda << " " << n;
      }
    }
  }
}

TEST(MaxOrder, VanishingMeanPutsMassAtZero)
{
  EXPECT_NEAR(max_order_pmf(0, 1e-12, 1024), 1.0, 1e-8);
}

TEST(MaxOrder, NormalizationGrid)
{
  for (const double lambda : {0.1, 1.0, 10.0, 1e3, 1e4}) {
    for (const std::uint64_t n : {std::uint64_t{1}, std::uint64_t{1} << 10, std::uint64_t{1} << 20,
                                  std::uint64_t{1} << 24}) {
      double s = 0;
      const auto top = static_cast<std::int64_t>(lambda + 20 * std::sqrt(lambda) + 50);
      for (std::int64_t x = 0; x <= top; ++x) {
        s += max_order_pmf(x, lambda, n);
      }
      EXPECT_NEAR(s, 1.0, 1e-9) << lambda << " " << n;
    }
  }
}

TEST(MaxOrder, MeanGrowsWithBinCount)
{
  for (const double lambda : {0.5, 20.0, 2000.0}) {
    double prev = -1;
    for (int q = 0; q <= 24; q += 2) {
      const double m = max_order_mean(lambda, std::uint64_t{1} << q);
      EXPECT_GE(m, prev - 1e-9) << lambda << " q=" << q;
      prev = m;
    }
  }
}

TEST(MaxOrder, QuantileBoundsTheFalseAcceptRate)
{
  const double lambda = 50;
  const std::uint64_t n = 1 << 16;
  const auto x = max_order_quantile(lambda, n, 1e-3);
  EXPECT_LE(1.0 - max_order_cdf(x, lambda, n), 1e-3);
  EXPECT_GT(1.0 - max_order_cdf(x - 1, lambda, n), 1e-3);
}

TEST(MaxOrderNormal, SingleBinIsNormalDensity)
{
  const double lambda = 400;
  for (const double x : {350.0, 400.0, 437.5}) {
    const double z = (x - lambda) / 20.0;
    EXPECT_NEAR(max_order_pmf_normal(x, lambda, 1), std::exp(-0.5 * z * z) / (20.0 * std::sqrt(2 * M_PI)), 1e-15);
  }
}

TEST(MaxOrderNormal, ModeMatchesPoissonAtLargeMean)
{
  const double lambda = 1e6;
  const std::uint64_t n = 1 << 20;
  const double normal = max_order_mode_normal(lambda, n);
  const auto exact = static_cast<double>(max_order_mode(lambda, n));
  EXPECT_LT(std::abs(normal - exact), 0.01 * exact);
}

TEST(MaxOrderNormal, UnderestimatesTheMaxAtSmallMean)
{
  const std::uint64_t n = 1 << 20;
  EXPECT_LT(max_order_mean_normal(10.0, n), max_order_mean(10.0, n));
}

TEST(SuccessProbability, NoSignalIsAtMostOneOverN)
{
  for (const int q : {1, 4, 10, 16}) {
    SuccessModelParams p = fig3(q, 1e-6);
    p.c = 0;
    EXPECT_LE(success_probability(p), 1.0 / static_cast<double>(p.n()) + 1e-12) << q;
  }
}

TEST(SuccessProbability, SeparatedSignalAlmostSurelyWins)
{
  SuccessModelParams p;
  p.q = 10;
  p.s1 = p.s2 = 1.0;
  p.delta_t_s = std::sqrt(1.0 / 1024.0);  // lambda_a = N dt^2 = 1
  p.nu = 1;
  p.c = 1e3 / p.duration_s();
  ASSERT_NEAR(p.lambda_a(), 1.0, 1e-12);
  EXPECT_GT(success_probability(p), 0.999);
}

TEST(SuccessProbability, MonotoneInSignalAndBackground)
{
  for (const int q : {12, 16, 20}) {
    double prev = -1;
    for (const double c : {0.0, 100.0, 300.0, 650.0, 1000.0, 3000.0}) {
      SuccessModelParams p = fig3(q, 1e-6);
      p.c = c;
      const double s = success_probability(p);
      EXPECT_GE(s, prev - 1e-12);
      prev = s;
    }
    prev = 2;
    for (const double s1 : {1e3, 1e4, 5e4, 1e5, 3e5}) {
      SuccessModelParams p = fig3(q, 1e-6);
      p.s1 = s1;
      const double s = success_probability(p);
      EXPECT_LE(s, prev + 1e-12);
      prev = s;
    }
  }
}

TEST(SuccessProbability, HugeMeanIsARangeError)
{
  SuccessModelParams p = fig3(30, 1.0);
  EXPECT_THROW(success_probability(p), RangeError);
}

TEST(SuccessProbability, InvalidOverlapIsRejected)
{
  SuccessModelParams p = fig3(10, 1e-6);
  p.nu = 0.3;
  EXPECT_THROW(success_probability(p), ParameterError);
}

TEST(SuccessProbability, DriftPenaltyAboveOneOverDu)
{
  SuccessModelParams p = fig3(20, 1e-6);
  EXPECT_DOUBLE_EQ(p.xi(), 1.0);
  p.q = 25;
  EXPECT_NEAR(p.xi(), std::ldexp(1.0, 25) * 50e-9, 1e-12);
}

TEST(SuccessProbabilityMc, AgreesWithAnalytic)
{
  for (const auto & [q, dt] : {std::pair{16, 4e-6}, std::pair{20, 1e-6}, std::pair{12, 64e-6}}) {
    const SuccessModelParams p = fig3(q, dt);
    const auto mc = success_probability_mc(p, 200'000, 5);
    const double a = success_probability(p);
    EXPECT_NEAR(mc.p, a, 3 * std::sqrt(std::max(a * (1 - a), 1e-6) / 200'000)) << q;
  }
}

TEST(SuccessProbabilityMc, NoBackgroundNeedsOneSignalCount)
{
  // Empty noise bins: the signal bin wins iff it holds at least one count.
  SuccessModelParams p = fig3(10, 1e-6);
  p.s1 = 0;
  const double expected = -std::expm1(-p.lambda_s());
  EXPECT_NEAR(success_probability(p), expected, 1e-12);
  const auto mc = success_probability_mc(p, 100'000, 1);
  EXPECT_NEAR(mc.p, expected, 3 * std::sqrt(expected * (1 - expected) / 1e5));
  p.c = 1e9;
  EXPECT_EQ(success_probability_mc(p, 1000, 1).p, 1.0);
}

TEST(SuccessProbabilityMc, TwoSymmetricBins)
{
  SuccessModelParams p;
  p.q = 1;
  p.s1 = p.s2 = 1e3;
  p.delta_t_s = 1e-3;  // lambda_a = 2
  p.c = 0;
  double tie = 0;
  for (std::int64_t x = 0; x < 60; ++x) {
    tie += oracle::poisson_pmf(x, 2.0) * oracle::poisson_pmf(x, 2.0);
  }
  const double expect = (1 - tie) / 2;
  const auto mc = success_probability_mc(p, 400'000, 77);
  EXPECT_NEAR(mc.p, expect, 3 * std::sqrt(expect * (1 - expect) / 400'000));
  EXPECT_NEAR(success_probability(p), expect, 1e-12);
}

TEST(SuccessProbabilityMc, DeterministicPerSeed)
{
  const SuccessModelParams p = fig3(14, 8e-6);
  EXPECT_EQ(success_probability_mc(p, 5000, 3).successes, success_probability_mc(p, 5000, 3).successes);
}

TEST(SuccessProbabilityNormal, OverestimatesAtSmallMeans)
{
  for (const int q : {14, 16, 18, 20, 22}) {
    for (const double dt : {64e-9, 256e-9, 1024e-9}) {
      const SuccessModelParams p = fig3(q, dt);
      if (p.lambda_a() >= 1e3) {
        continue;
      }
      EXPECT_GE(success_probability_normal(p), success_probability(p) - 1e-12) << q << " " << dt;
    }
  }
}

TEST(Significance, ArithmeticAndScaling)
{
  EXPECT_NEAR(significance(650, std::ldexp(1.0, 20), 1e5, 1e5), 6.656, 1e-9);
  EXPECT_NEAR(significance(650, 4 * 1024.0, 1e5, 1e5), 2 * significance(650, 1024.0, 1e5, 1e5), 1e-12);
  // No bin-width argument: the same value at any dt for fixed N and c_e.
  SuccessModelParams a = fig3(20, 1e-6), b = fig3(20, 4e-6);
  EXPECT_EQ(significance(a.c_e(), a.n(), a.s1, a.s2), significance(b.c_e(), b.n(), b.s1, b.s2));
  EXPECT_THROW(significance(0, 1, 1, 1), ParameterError);
}

TEST(SurfaceCsv, Header)
{
  std::ostringstream os;
  write_surface_csv(os, {SurfacePoint{10, 1000, 0.5, {}, std::nullopt}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "q,delta_t_ps,prob,prob_mc,ci_low,ci_high");
}
