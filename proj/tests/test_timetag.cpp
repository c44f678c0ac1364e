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

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "wcps/timetag.hpp"

using namespace wcps;
using namespace std::chrono_literals;

TEST(Clock, ZeroModelIsIdentity)
{
  const auto s = testutil::poisson_stream(1e5, 1.0, 1);
  ClockModel m;
  EXPECT_TRUE(m.is_identity());
  EXPECT_EQ(apply_clock(s, m).ticks, s.ticks);
}

TEST(Clock, ConstantOffsetShiftsOneSecondBy100ns)
{
  EventStream s;
  s.ticks = {TimeTick{0}, seconds_to_ticks(1.0)};
  ClockModel m;
  m.du0 = ppb(100);
  const auto out = apply_clock(s, m);
  EXPECT_EQ(out.ticks[0].count(), 0);
  EXPECT_EQ(out.ticks[1] - s.ticks[1], TimeTick{100'000});
}

TEST(Clock, RandomWalkFiniteDifferencesMatchStoredTrace)
{
  ClockModel m;
  m.rw_step = ppb(3.3);
  m.seed = 42;
  const ClockTrace tr(m, 600.0);
  ASSERT_GE(tr.walk().size(), 600u);
  const double h = 0.1;
  double worst = 0.0;
  for (int k = 0; k < 600; ++k) {
    const double mid = k + 0.5;
    const auto lo = tr.to_local(seconds_to_ticks(mid - h));
    const auto hi = tr.to_local(seconds_to_ticks(mid + h));
    const double rate = static_cast<double>((hi - lo).count()) / (2 * h * 1e12) - 1.0;
    const double stored = 0.5 * (tr.walk()[k] + tr.walk()[k + 1]);
    worst = std::max(worst, std::abs(rate - stored));
  }
  EXPECT_LT(worst, ppb(0.1));
}

TEST(Clock, InverseMapRoundTripsWithinOneTick)
{
  ClockModel m;
  m.offset = TimeTick{-12345678};
  m.du0 = ppm(4);
  m.drift_rate = ppb(1);
  m.rw_step = ppb(3.3);
  m.seed = 9;
  const ClockTrace tr(m, 100.0);
  for (double t = 0.0; t < 100.0; t += 0.731) {
    const TimeTick x = seconds_to_ticks(t);
    EXPECT_LE(std::abs((tr.to_true(tr.to_local(x)) - x).count()), 1) << "t=" << t;
  }
}

TEST(Clock, SameSeedSameOutput)
{
  const auto s = testutil::poisson_stream(2e4, 30.0, 3);
  ClockModel m;
  m.rw_step = ppb(3.3);
  m.seed = 77;
  EXPECT_EQ(apply_clock(s, m).ticks, apply_clock(s, m).ticks);
  ClockModel other = m;
  other.seed = 78;
  EXPECT_NE(apply_clock(s, m).ticks, apply_clock(s, other).ticks);
}

TEST(Clock, RejectsUnsortedInputAndHugeOffsets)
{
  EventStream s;
  s.ticks = {TimeTick{5}, TimeTick{3}};
  EXPECT_THROW(apply_clock(s, ClockModel{}), OrderingError);
  EventStream ok;
  ok.ticks = {TimeTick{0}, seconds_to_ticks(1)};
  ClockModel m;
  m.du0 = 2e-3;
  EXPECT_THROW(apply_clock(ok, m), ParameterError);
}

TEST(Clock, OutputStaysSorted)
{
  const auto s = testutil::poisson_stream(1e5, 5.0, 8);
  ClockModel m;
  m.du0 = ppm(-9);
  m.rw_step = ppb(50);
  m.seed = 1;
  EXPECT_TRUE(is_sorted(apply_clock(s, m).ticks));
}

TEST(CorrectFrequency, ZeroIsIdentity)
{
  const auto s = testutil::poisson_stream(1e4, 1.0, 2);
  EXPECT_EQ(correct_frequency(s, 0.0).ticks, s.ticks);
}

TEST(CorrectFrequency, OnePpmOverAMicrosecond)
{
  EventStream s;
  s.ticks = {TimeTick{0}, TimeTick{1'000'000}};
  const auto out = correct_frequency(s, 1e-6);
  EXPECT_EQ(out.ticks[0].count(), 0);
  EXPECT_EQ(out.ticks[1].count(), 1'000'001);
}

TEST(CorrectFrequency, UndoesConstantClockWithinOneTick)
{
  auto s = testutil::poisson_stream(1e5, 10.0, 5);
  s.ticks.insert(s.ticks.begin(), TimeTick{0});
  for (const double u : {ppm(4), ppb(-37), ppm(-10)}) {
    ClockModel m;
    m.du0 = u;
    const auto back = correct_frequency(apply_clock(s, m), inverse_frequency(u));
    ASSERT_EQ(back.size(), s.size());
    std::int64_t worst = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      worst = std::max(worst, std::abs((back.ticks[i] - s.ticks[i]).count()));
    }
    EXPECT_LE(worst, 1) << "u=" << u;
  }
}

TEST(CorrectFrequency, MatchesCumulativeIntervalForm)
{
  const auto s = testutil::poisson_stream(1e3, 50.0, 6);
  const double du = ppb(123);
  const auto out = correct_frequency(s, du);
  // Integer part summed exactly, the du part in long double.
  std::int64_t whole = s.ticks[0].count();
  long double frac = 0.0L;
  for (std::size_t i = 1; i < s.size(); ++i) {
    const std::int64_t dt = (s.ticks[i] - s.ticks[i - 1]).count();
    whole += dt;
    frac += static_cast<long double>(dt) * du;
    const long double acc = static_cast<long double>(whole) + frac;
    EXPECT_LE(std::abs(static_cast<long double>(out.ticks[i].count()) - acc), 0.5L + 1e-6L);
  }
}

TEST(Coincidence, SameTimeIsOnePairAtZero)
{
  const std::vector<TimeTick> a{TimeTick{100}}, b{TimeTick{100}};
  const auto p = coincidence_pairs(a, b, TimeTick{0}, 256ns);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].tau.count(), 0);
}

TEST(Coincidence, OutsideHalfWindowIsNoPair)
{
  const std::vector<TimeTick> a{TimeTick{0}}, b{TimeTick{200'000}};
  EXPECT_TRUE(coincidence_pairs(a, b, TimeTick{0}, 256ns).empty());
  // Exactly on the edge is inside.
  const std::vector<TimeTick> c{TimeTick{128'000}};
  EXPECT_EQ(coincidence_pairs(a, c, TimeTick{0}, 256ns).size(), 1u);
}

TEST(Coincidence, AccidentalRateOfPoissonStreams)
{
  const auto a = testutil::poisson_stream(1e5, 1.0, 11);
  const auto b = testutil::poisson_stream(1e5, 1.0, 12);
  const auto p = coincidence_pairs(a, b, TimeTick{0}, 256ns);
  const double n = static_cast<double>(p.size());
  const double simple = 1e5 * 1e5 * 256e-9;
  EXPECT_NEAR(n, simple, 3 * std::sqrt(simple));
  // One pair per a event: s1 (1 - exp(-s2 w)).
  const double exact = a.size() * -std::expm1(-b.measured_rate() * 256e-9);
  EXPECT_NEAR(n, exact, 3 * std::sqrt(exact));
}

TEST(Coincidence, SwappingStreamsNegatesTau)
{
  // Events far apart compared with the window, so pairing is unambiguous.
  std::mt19937_64 rng(4);
  std::vector<TimeTick> a, b;
  std::int64_t t = 0;
  for (int i = 0; i < 2000; ++i) {
    t += 1'000'000 + static_cast<std::int64_t>(rng() % 1'000'000);
    a.push_back(TimeTick{t});
    if (rng() % 3 != 0) {
      b.push_back(TimeTick{t + static_cast<std::int64_t>(rng() % 300'000) - 150'000});
    }
  }
  std::sort(b.begin(), b.end());
  const auto ab = coincidence_pairs(a, b, TimeTick{0}, 256ns);
  const auto ba = coincidence_pairs(b, a, TimeTick{0}, 256ns);
  ASSERT_EQ(ab.size(), ba.size());
  ASSERT_GT(ab.size(), 500u);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    EXPECT_EQ(ab[i].tau, -ba[i].tau);
    EXPECT_EQ(ab[i].a, ba[i].b);
  }
}

TEST(Coincidence, NearestWinsAndOnePairPerEvent)
{
  const std::vector<TimeTick> a{TimeTick{1'000'000}};
  const std::vector<TimeTick> b{TimeTick{900'000}, TimeTick{960'000}, TimeTick{1'050'000}};
  const auto p = coincidence_pairs(a, b, TimeTick{0}, 256ns);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].b.count(), 960'000);
}

TEST(Coincidence, RejectsNonPositiveWindow)
{
  const std::vector<TimeTick> a{TimeTick{0}};
  EXPECT_THROW(coincidence_pairs(a, a, TimeTick{0}, TimeTick{0}), ParameterError);
}
