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

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "wcps/correlation.hpp"
#include "wcps/source_sim.hpp"

using namespace wcps;
using namespace std::chrono_literals;

namespace
{
Trace random_sparse_trace(std::size_t n, std::size_t events, std::mt19937_64 & rng)
{
  Trace t(n, 0);
  for (std::size_t i = 0; i < events; ++i) {
    ++t[rng() % n];
  }
  return t;
}
}  // namespace

TEST(Binning, EmptyStreamIsAllZero)
{
  GridParams g;
  g.q = 8;
  const Trace t = bin_events(EventStream{}, g);
  ASSERT_EQ(t.size(), 256u);
  EXPECT_TRUE(std::all_of(t.begin(), t.end(), [](auto v) { return v == 0; }));
}

TEST(Binning, EventAtOriginLandsInBinZero)
{
  GridParams g;
  g.q = 4;
  g.delta_t = 10ns;
  g.origin = TimeTick{777};
  const std::vector<TimeTick> one{TimeTick{777}};
  const Trace t = bin_events(one, g);
  EXPECT_EQ(t[0], 1u);
  EXPECT_EQ(std::accumulate(t.begin(), t.end(), 0u), 1u);
}

TEST(Binning, FoldsOutsideEventsLikeDirectModulo)
{
  GridParams g;
  g.q = 5;
  g.delta_t = TimeTick{1000};
  g.origin = TimeTick{-5500};
  std::mt19937_64 rng(3);
  std::vector<TimeTick> t;
  for (int i = 0; i < 5000; ++i) {
    t.push_back(TimeTick{static_cast<std::int64_t>(rng() % 400'000) - 200'000});
  }
  std::sort(t.begin(), t.end());
  EXPECT_EQ(bin_events(t, g), oracle::fold_bins(t, -5500, 1000, 32));
}

TEST(Binning, PoissonOccupancy)
{
  const auto s = testutil::poisson_stream(1e5, 1.0, 4);
  GridParams g;
  g.q = 16;
  g.delta_t = seconds_to_ticks(1.0 / 65536);
  const Trace t = bin_events(s, g);
  const double mean = std::accumulate(t.begin(), t.end(), 0.0) / t.size();
  const double expect = 1e5 / 65536;
  EXPECT_NEAR(mean, expect, 3 * std::sqrt(expect / 65536));
}

TEST(Xcorr, DeltaAutocorrelation)
{
  const Trace a{1, 0, 0, 0};
  EXPECT_EQ(xcorr(a, a), (std::vector<std::int64_t>{1, 0, 0, 0}));
}

TEST(Xcorr, ShiftedDeltaPeaksAtLagOne)
{
  const Trace a{1, 0, 0, 0}, b{0, 1, 0, 0};
  const auto c = xcorr(a, b);
  EXPECT_EQ(std::max_element(c.begin(), c.end()) - c.begin(), 1);
}

TEST(Xcorr, MatchesDirectSumOnRandomSparseTraces)
{
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = std::size_t{1} << (1 + rng() % 12);
    const Trace a = random_sparse_trace(n, rng() % 10001, rng);
    const Trace b = random_sparse_trace(n, rng() % 10001, rng);
    ASSERT_EQ(xcorr(a, b), oracle::direct_xcorr(a, b)) << "n=" << n;
  }
}

TEST(Xcorr, CircularShiftMovesArgmax)
{
  std::mt19937_64 rng(7);
  const std::size_t n = 1024;
  Trace a = random_sparse_trace(n, 300, rng);
  for (const std::size_t m : {0u, 1u, 37u, 511u, 1000u}) {
    Trace b(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[(i + m) % n] = a[i];
    }
    const auto c = xcorr(a, b);
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin()), m);
  }
}

TEST(Xcorr, SumOverLagsIsProductOfTotals)
{
  std::mt19937_64 rng(8);
  const Trace a = random_sparse_trace(4096, 9000, rng);
  const Trace b = random_sparse_trace(4096, 7000, rng);
  const auto c = xcorr(a, b);
  EXPECT_EQ(std::accumulate(c.begin(), c.end(), std::int64_t{0}), std::int64_t{9000} * 7000);
}

TEST(Xcorr, RejectsBadLengthsAndUnsafeMagnitudes)
{
  EXPECT_THROW(xcorr(Trace(4), Trace(8)), ParameterError);
  EXPECT_THROW(xcorr(Trace(6), Trace(6)), ParameterError);
  Trace big(1024, 0);
  big[0] = 1u << 22;
  EXPECT_THROW(xcorr(big, big), RangeError);
}

TEST(Xcorr, ExactAtTheDocumentedBound)
{
  // N * max(a) * max(b) just below 2^52.
  std::mt19937_64 rng(9);
  const std::size_t n = 1024;
  Trace a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = static_cast<std::uint32_t>(rng() % 65535);
    b[i] = static_cast<std::uint32_t>(rng() % 65535);
  }
  a[3] = b[5] = 65535;
  ASSERT_LT(1024.0 * 65535 * 65535, 0x1p52);
  EXPECT_EQ(xcorr(a, b), oracle::direct_xcorr(a, b));
}

TEST(PairHistogram, MatchesAllPairsOracle)
{
  const auto a = testutil::poisson_stream(2e4, 0.2, 1);
  const auto b = testutil::poisson_stream(2e4, 0.2, 2);
  const auto g = centered_lag_grid(6, 250ns);
  const auto h = pair_histogram(a, b, g);
  EXPECT_EQ(h.counts, oracle::all_pairs_histogram(a.ticks, b.ticks, g.origin.count(), 250'000, 64));
}

TEST(CircularHistogram, CountsSumToAllPairsOnTheGrid)
{
  const auto a = testutil::poisson_stream(5e4, 0.01, 3);
  const auto b = testutil::poisson_stream(5e4, 0.01, 4);
  GridParams g;
  g.q = 10;
  g.delta_t = seconds_to_ticks(0.01 / 1024);
  const auto h = circular_histogram(a, b, g);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::int64_t{0}),
            static_cast<std::int64_t>(a.size() * b.size()));
  // Middle bin is tau = 0: lag 0 of the raw correlation.
  const auto c = xcorr(bin_events(a, g), bin_events(b, g));
  EXPECT_EQ(h.counts[512], c[0]);
  EXPECT_EQ(h.counts[513], c[1023]);
}

TEST(G2Normalize, ZeroCountsStayZero)
{
  CorrelationHistogram h;
  h.grid = centered_lag_grid(4, 10ns);
  h.counts.assign(16, 0);
  const auto n = g2_normalize(h, 1e5, 1e5, 1.0);
  EXPECT_TRUE(std::all_of(n.normalized.begin(), n.normalized.end(), [](double v) { return v == 0.0; }));
  EXPECT_THROW(g2_normalize(h, 0.0, 1e5, 1.0), ParameterError);
}

TEST(G2Normalize, UncorrelatedStreamsAreFlat)
{
  const auto a = testutil::poisson_stream(1e5, 5.0, 5);
  const auto b = testutil::poisson_stream(1e5, 5.0, 6);
  const auto h = g2_normalize(pair_histogram(a, b, centered_lag_grid(6, 50ns)),
                              a.size() / 5.0, b.size() / 5.0, 5.0);
  double chi2 = 0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double z = (h.normalized[k] - 1.0) / h.errors[k];
    chi2 += z * z;
  }
  EXPECT_LT(chi2, boost::math::quantile(boost::math::chi_squared(64.0), 0.95));
}

TEST(G2Normalize, PeakBinCarriesTheCaptureFactor)
{
  SourceParams p;
  p.duration_s = 10.0;
  p.seed = 44;
  const auto [a, b] = generate(p);
  const auto h = g2_normalize(pair_histogram(a, b, centered_lag_grid(4, 256ns)),
                              a.size() / 10.0, b.size() / 10.0, 10.0);
  // Mean of exp(-2|tau|/tau_c) over the centered bin.
  const double r = 256.0 / 180.0;
  const double expect = 1.0 + 0.42 * -std::expm1(-r) / r;
  EXPECT_NEAR(h.normalized[8], expect, 3 * h.errors[8]);
}

TEST(FitG2, NoiselessCurveRecoversToSixDigits)
{
  CorrelationHistogram h;
  h.grid = centered_lag_grid(7, 16ns);
  h.counts.assign(128, 0);
  h.normalized.resize(128);
  for (std::size_t k = 0; k < 128; ++k) {
    const double x = static_cast<double>(h.lag_center(k).count()) * 1e-3 - 3.0;
    h.normalized[k] = 1.0 + 0.5 * std::exp(-2.0 * std::abs(x) / 180.0);
  }
  const G2Fit f = fit_g2(h);
  EXPECT_NEAR(f.amplitude, 0.5, 5e-7);
  EXPECT_NEAR(f.tau_c_s * 1e9, 180.0, 180e-6);
  EXPECT_NEAR(f.tau0_s * 1e9, 3.0, 1e-5);
}

TEST(FitG2, FlatInputIsDegenerate)
{
  const auto a = testutil::poisson_stream(1e5, 2.0, 7);
  const auto b = testutil::poisson_stream(1e5, 2.0, 8);
  const auto h = g2_normalize(pair_histogram(a, b, centered_lag_grid(6, 32ns)),
                              a.size() / 2.0, b.size() / 2.0, 2.0);
  EXPECT_TRUE(fit_g2(h).degenerate);
}

TEST(FitG2, NeedsTenNormalizedBins)
{
  CorrelationHistogram h;
  h.grid = centered_lag_grid(3, 16ns);
  h.counts.assign(8, 1);
  EXPECT_THROW(fit_g2(h), ParameterError);
}

TEST(HistogramCsv, HeaderAndRows)
{
  CorrelationHistogram h;
  h.grid = centered_lag_grid(1, 1ns);
  h.counts = {3, 4};
  std::ostringstream os;
  write_histogram_csv(os, g2_normalize(h, 1e3, 1e3, 1e3));
  const std::string csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "lag_ps,counts,g2,g2_err");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
