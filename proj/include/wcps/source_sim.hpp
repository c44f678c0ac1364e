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

#ifndef WCPS__SOURCE_SIM_HPP_
#define WCPS__SOURCE_SIM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "wcps/error.hpp"
#include "wcps/random.hpp"
#include "wcps/timetag.hpp"

namespace wcps
{
/// Detected two-channel bunched light. Rates are per-detector totals
/// including dark counts.
struct SourceParams
{
  double g2_peak = 1.42;
  TimeTick tau_c = std::chrono::nanoseconds(180);
  double s1 = 192e3;
  double s2 = 182e3;
  double dark1 = 0.0;
  double dark2 = 0.0;
  TimeTick jitter_sigma{0};
  TimeTick dead_time{0};
  double duration_s = 10.0;
  std::uint64_t seed = 1;

  double tau_c_s() const { return to_seconds(tau_c); }

  /// Total excess coincidence rate c, integrated over all delays.
  double excess_rate() const { return (g2_peak - 1.0) * s1 * s2 * tau_c_s(); }

  /// Probability that a non-dark channel-1 click has a channel-2 partner.
  double partner_probability() const
  {
    const double signal1 = s1 - dark1;
    if (g2_peak == 1.0) {
      return 0.0;
    }
    return signal1 > 0.0 ? excess_rate() / signal1 : std::numeric_limits<double>::infinity();
  }

  /// Channel-2 clicks that are neither partners nor darks.
  double background2() const { return s2 - dark2 - excess_rate(); }

  void validate() const
  {
    if (!(g2_peak >= 1.0 && g2_peak <= 1.5)) {
      throw ParameterError("source: g2_peak must lie in [1, 1.5]");
    }
    if (tau_c.count() <= 0) {
      throw ParameterError("source: tau_c must be positive");
    }
    if (s1 < 0 || s2 < 0 || dark1 < 0 || dark2 < 0) {
      throw ParameterError("source: rates must be non-negative");
    }
    if (dark1 > s1 || dark2 > s2) {
      throw ParameterError("source: dark rate exceeds singles rate");
    }
    if (!(duration_s >= 0.0)) {
      throw ParameterError("source: duration must be non-negative");
    }
    if (jitter_sigma.count() < 0 || dead_time.count() < 0) {
      throw ParameterError("source: jitter and dead time must be non-negative");
    }
    if (partner_probability() > 1.0) {
      throw ParameterError(
        "source: partner probability (g2_peak-1)*s1*s2*tau_c/(s1-dark1) = " +
        std::to_string(partner_probability()) + " exceeds 1");
    }
    if (background2() < 0.0) {
      throw ParameterError(
        "source: excess rate (g2_peak-1)*s1*s2*tau_c exceeds s2 - dark2; lower g2_peak or rates");
    }
  }
};

namespace detail
{
class PoissonArrivals
{
public:
  PoissonArrivals(double rate_hz, std::uint64_t seed)
  : rng_(seed), interval_(rate_hz > 0.0 ? rate_hz * 1e-12 : 1.0), active_(rate_hz > 0.0)
  {
    if (active_) {
      next_ = draw();
    }
  }

  bool before(std::int64_t horizon) const { return active_ && next_ < horizon; }
  std::int64_t pop()
  {
    const std::int64_t t = next_;
    next_ += draw();
    return t;
  }

private:
  std::int64_t draw() { return std::llround(interval_(rng_)); }

  std::mt19937_64 rng_;
  std::exponential_distribution<double> interval_;
  bool active_;
  std::int64_t next_ = 0;
};

inline void apply_dead_time(std::vector<TimeTick> & ticks, TimeTick dead, std::int64_t & last_kept)
{
  if (dead.count() <= 0) {
    return;
  }
  std::size_t w = 0;
  for (const TimeTick t : ticks) {
    if (t.count() - last_kept >= dead.count()) {
      ticks[w++] = t;
      last_kept = t.count();
    }
  }
  ticks.resize(w);
}
}  // namespace detail

/// Incremental generator. Successive next_block calls return contiguous time
/// windows; the concatenation is identical to a single call over the whole
/// duration, so long runs need not hold every event in memory.
///
/// Channel 1 is Poisson. Each non-dark channel-1 click gets, with the partner
/// probability, a channel-2 partner delayed by a Laplace variate of density
/// exp(-2|tau|/tau_c)/tau_c. Independent Poisson background fills channel 2
/// up to s2. Jitter, then dead time, are applied last.
class PairSource
{
public:
  explicit PairSource(const SourceParams & params)
  : params_(params),
    signal1_(params.s1 - params.dark1, derive_seed(params.seed, 1)),
    dark1_(params.dark1, derive_seed(params.seed, 2)),
    background2_(params.s2 - params.excess_rate(), derive_seed(params.seed, 3)),
    partner_rng_(derive_seed(params.seed, 4)),
    jitter1_rng_(derive_seed(params.seed, 5)),
    jitter2_rng_(derive_seed(params.seed, 6)),
    partner_prob_(params.partner_probability()),
    laplace_scale_(0.5 * static_cast<double>(params.tau_c.count())),
    laplace_cut_(12.0 * static_cast<double>(params.tau_c.count()))
  {
    params.validate();
    end_ = std::llround(params.duration_s * kTicksPerSecond);
    margin_ = static_cast<std::int64_t>(laplace_cut_) + 12 * params.jitter_sigma.count() + 1000;
  }

  const SourceParams & params() const noexcept { return params_; }
  bool done() const noexcept { return emitted_ >= end_; }
  double emitted_until_s() const noexcept { return static_cast<double>(emitted_) * 1e-12; }

  /// Events with true time in [previous end, min(until_s, duration)).
  std::pair<EventStream, EventStream> next_block(double until_s)
  {
    const std::int64_t until = std::min<std::int64_t>(end_, std::llround(until_s * kTicksPerSecond));
    EventStream a;
    EventStream b;
    a.channel_id = 1;
    b.channel_id = 2;
    a.nominal_rate = params_.s1;
    b.nominal_rate = params_.s2;
    if (until <= emitted_) {
      return {std::move(a), std::move(b)};
    }
    generate_until(until + margin_);
    a.duration_s = b.duration_s = static_cast<double>(until - emitted_) * 1e-12;
    emit(pending1_, until, a.ticks, last1_);
    emit(pending2_, until, b.ticks, last2_);
    emitted_ = until;
    if (done()) {
      pending1_.clear();
      pending2_.clear();
    }
    return {std::move(a), std::move(b)};
  }

private:
  std::int64_t jitter(std::mt19937_64 & rng)
  {
    if (params_.jitter_sigma.count() == 0) {
      return 0;
    }
    std::normal_distribution<double> n(0.0, static_cast<double>(params_.jitter_sigma.count()));
    return std::llround(n(rng));
  }

  double laplace()
  {
    std::exponential_distribution<double> mag(1.0 / laplace_scale_);
    std::bernoulli_distribution sign(0.5);
    for (;;) {
      const double m = mag(partner_rng_);
      const bool negative = sign(partner_rng_);
      if (m <= laplace_cut_) {
        return negative ? -m : m;
      }
    }
  }

  void generate_until(std::int64_t horizon)
  {
    std::bernoulli_distribution has_partner(std::min(1.0, partner_prob_));
    while (signal1_.before(horizon)) {
      const std::int64_t t = signal1_.pop();
      pending1_.push_back(TimeTick{t + jitter(jitter1_rng_)});
      if (partner_prob_ > 0.0 && has_partner(partner_rng_)) {
        const auto delay = std::llround(laplace());
        pending2_.push_back(TimeTick{t + delay + jitter(jitter2_rng_)});
      }
    }
    while (dark1_.before(horizon)) {
      pending1_.push_back(TimeTick{dark1_.pop()});
    }
    while (background2_.before(horizon)) {
      pending2_.push_back(TimeTick{background2_.pop()});
    }
  }

  void emit(
    std::vector<TimeTick> & pending, std::int64_t until, std::vector<TimeTick> & out,
    std::int64_t & last_kept)
  {
    std::sort(pending.begin(), pending.end());
    auto split = std::lower_bound(pending.begin(), pending.end(), TimeTick{until});
    auto first = std::lower_bound(pending.begin(), split, TimeTick{0});
    out.assign(first, split);
    pending.erase(pending.begin(), split);
    detail::apply_dead_time(out, params_.dead_time, last_kept);
  }

  SourceParams params_;
  detail::PoissonArrivals signal1_;
  detail::PoissonArrivals dark1_;
  detail::PoissonArrivals background2_;
  std::mt19937_64 partner_rng_;
  std::mt19937_64 jitter1_rng_;
  std::mt19937_64 jitter2_rng_;
  double partner_prob_;
  double laplace_scale_;
  double laplace_cut_;
  std::int64_t end_ = 0;
  std::int64_t margin_ = 0;
  std::int64_t emitted_ = 0;
  std::int64_t last1_ = std::numeric_limits<std::int64_t>::min() / 2;
  std::int64_t last2_ = std::numeric_limits<std::int64_t>::min() / 2;
  std::vector<TimeTick> pending1_;
  std::vector<TimeTick> pending2_;
};

/// Both detector streams over the whole duration, in true time.
inline std::pair<EventStream, EventStream> generate(const SourceParams & params)
{
  PairSource source(params);
  return source.next_block(params.duration_s);
}

/// Bernoulli thinning with survival 10^(loss_db/10). Stateful so it can be
/// applied block by block with the same result as on the whole stream.
class Attenuator
{
public:
  Attenuator(double loss_db, std::uint64_t seed) : survival_(std::pow(10.0, loss_db / 10.0)), rng_(seed)
  {
    if (!(loss_db <= 0.0)) {
      throw ParameterError("attenuate: loss_db must be <= 0 dB");
    }
  }

  double survival() const noexcept { return survival_; }

  void apply(std::vector<TimeTick> & ticks)
  {
    if (survival_ >= 1.0) {
      return;
    }
    std::bernoulli_distribution keep(survival_);
    std::size_t w = 0;
    for (const TimeTick t : ticks) {
      if (keep(rng_)) {
        ticks[w++] = t;
      }
    }
    ticks.resize(w);
  }

private:
  double survival_;
  std::mt19937_64 rng_;
};

inline EventStream attenuate(const EventStream & stream, double loss_db, std::uint64_t seed)
{
  Attenuator att(loss_db, seed);
  EventStream out = stream;
  att.apply(out.ticks);
  out.nominal_rate *= att.survival();
  return out;
}

}  // namespace wcps

#endif  // WCPS__SOURCE_SIM_HPP_
