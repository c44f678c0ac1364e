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

#ifndef WCPS__TIMETAG_HPP_
#define WCPS__TIMETAG_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wcps/error.hpp"

namespace wcps
{
/// One picosecond. 64-bit signed ticks cover roughly +-106 days.
using TimeTick = std::chrono::duration<std::int64_t, std::pico>;

inline constexpr double kTicksPerSecond = 1e12;

inline TimeTick seconds_to_ticks(double seconds)
{
  return TimeTick{std::llround(seconds * kTicksPerSecond)};
}
constexpr double to_seconds(TimeTick t) { return static_cast<double>(t.count()) * 1e-12; }

constexpr double ppb(double v) { return v * 1e-9; }
constexpr double ppm(double v) { return v * 1e-6; }

/// Detector clicks of one channel as read by one clock.
struct EventStream
{
  std::uint8_t channel_id = 0;
  std::vector<TimeTick> ticks;
  double duration_s = 0.0;    ///< acquisition length the stream was recorded over
  double nominal_rate = 0.0;  ///< requested counts/s, 0 if unknown

  std::size_t size() const noexcept { return ticks.size(); }
  bool empty() const noexcept { return ticks.empty(); }
  TimeTick front() const { return ticks.front(); }
  TimeTick back() const { return ticks.back(); }

  double measured_rate() const
  {
    return duration_s > 0.0 ? static_cast<double>(ticks.size()) / duration_s : 0.0;
  }
  friend bool operator==(const EventStream &, const EventStream &) = default;
};

inline bool is_sorted(std::span<const TimeTick> ticks)
{
  return std::is_sorted(ticks.begin(), ticks.end());
}

inline void require_sorted(std::span<const TimeTick> ticks, const char * who)
{
  auto it = std::is_sorted_until(ticks.begin(), ticks.end());
  if (it != ticks.end()) {
    throw OrderingError(
      std::string(who) + ": timestamps decrease at index " +
      std::to_string(std::distance(ticks.begin(), it)));
  }
}

/// Parametric local clock: reads offset + t + integral of du over [0, t].
/// du(t) = du0 + drift_rate * t + w(t), with w a random walk sampled at whole
/// seconds and linearly interpolated in between.
struct ClockModel
{
  TimeTick offset{0};
  double du0 = 0.0;         ///< fractional frequency offset
  double drift_rate = 0.0;  ///< change of du per second
  double rw_step = 0.0;     ///< std of the per-second random-walk increment
  double rw_bound = 0.0;    ///< reflecting bound on |w|, 0 for unbounded
  std::uint64_t seed = 0;

  bool is_identity() const
  {
    return offset.count() == 0 && du0 == 0.0 && drift_rate == 0.0 && rw_step == 0.0;
  }
};

/// Realization of a ClockModel over [0, span_s]. Holds the random-walk nodes
/// so the exact mapping, its inverse and the instantaneous du are available.
class ClockTrace
{
public:
  static constexpr double kMaxFrequencyOffset = 1e-3;

  ClockTrace(const ClockModel & model, double span_s) : model_(model)
  {
    const auto nodes = static_cast<std::size_t>(std::ceil(std::max(span_s, 0.0))) + 2;
    walk_.assign(nodes, 0.0);
    if (model.rw_step > 0.0) {
      std::mt19937_64 rng(model.seed);
      std::normal_distribution<double> step(0.0, model.rw_step);
      for (std::size_t k = 1; k < nodes; ++k) {
        double w = walk_[k - 1] + step(rng);
        if (model.rw_bound > 0.0) {
          const double b = model.rw_bound;
          while (std::abs(w) > b) {
            w = (w > 0 ? 2.0 * b : -2.0 * b) - w;
          }
        }
        walk_[k] = w;
      }
    }
    cumulative_.assign(nodes, 0.0L);
    for (std::size_t k = 1; k < nodes; ++k) {
      cumulative_[k] = cumulative_[k - 1] + 0.5L * (static_cast<long double>(walk_[k - 1]) + walk_[k]);
    }
    for (std::size_t k = 0; k < nodes; ++k) {
      check_du(du_at(static_cast<double>(k)));
    }
    check_du(du_at(std::max(span_s, 0.0)));
  }

  const ClockModel & model() const noexcept { return model_; }

  /// Random-walk component at t = 0, 1, 2, ... seconds.
  const std::vector<double> & walk() const noexcept { return walk_; }

  double du_at(double t_s) const
  {
    return model_.du0 + model_.drift_rate * t_s + walk_at(t_s);
  }

  /// Integral of du over [0, t_s], in seconds.
  long double integral(long double t_s) const
  {
    const long double linear = model_.du0 * t_s + 0.5L * model_.drift_rate * t_s * t_s;
    if (t_s <= 0.0L) {
      return linear;
    }
    const std::size_t last = walk_.size() - 1;
    const auto k = static_cast<std::size_t>(std::floor(t_s));
    if (k >= last) {
      return linear + cumulative_[last] + walk_[last] * (t_s - static_cast<long double>(last));
    }
    const long double f = t_s - static_cast<long double>(k);
    const long double w0 = walk_[k];
    const long double w1 = walk_[k + 1];
    return linear + cumulative_[k] + w0 * f + 0.5L * (w1 - w0) * f * f;
  }

  TimeTick to_local(TimeTick t) const
  {
    const long double ts = static_cast<long double>(t.count()) * 1e-12L;
    const long double shift = integral(ts) * 1e12L;
    return TimeTick{model_.offset.count() + t.count() + std::llround(shift)};
  }

  /// Inverse of to_local up to rounding (Newton iteration on the smooth map).
  TimeTick to_true(TimeTick local) const
  {
    const long double target = static_cast<long double>(local.count() - model_.offset.count());
    long double x = target;
    for (int it = 0; it < 8; ++it) {
      const long double g = x + integral(x * 1e-12L) * 1e12L - target;
      x -= g / (1.0L + du_at(static_cast<double>(x * 1e-12L)));
      if (std::abs(g) < 1e-3L) {
        break;
      }
    }
    return TimeTick{std::llround(x)};
  }

private:
  double walk_at(double t_s) const
  {
    if (t_s <= 0.0) {
      return walk_.front();
    }
    const std::size_t last = walk_.size() - 1;
    const auto k = static_cast<std::size_t>(std::floor(t_s));
    if (k >= last) {
      return walk_[last];
    }
    const double f = t_s - static_cast<double>(k);
    return walk_[k] + (walk_[k + 1] - walk_[k]) * f;
  }

  static void check_du(double du)
  {
    if (!(std::abs(du) < kMaxFrequencyOffset)) {
      throw ParameterError(
        "clock model: |du(t)| must stay below 1e-3 over the stream span (got " +
        std::to_string(du) + ")");
    }
  }

  ClockModel model_;
  std::vector<double> walk_;
  std::vector<long double> cumulative_;
};

inline EventStream apply_clock(const EventStream & stream, const ClockTrace & trace)
{
  require_sorted(stream.ticks, "apply_clock");
  EventStream out = stream;
  for (auto & t : out.ticks) {
    t = trace.to_local(t);
  }
  return out;
}

/// Timestamps of `stream` as read by a local clock following `clock`.
inline EventStream apply_clock(const EventStream & stream, const ClockModel & clock)
{
  require_sorted(stream.ticks, "apply_clock");
  const double span = stream.empty() ? 0.0 : std::max(0.0, to_seconds(stream.back()));
  return apply_clock(stream, ClockTrace(clock, span));
}

/// t -> t + (t - anchor) * du, rounded to the nearest tick. Equal to the
/// cumulative per-interval form t_i -> t_i + dt_i * du summed from the anchor.
inline void correct_frequency(
  std::span<const TimeTick> in, TimeTick anchor, double du, std::vector<TimeTick> & out)
{
  out.resize(in.size());
  const long double k = du;
  const std::int64_t a = anchor.count();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::int64_t dt = in[i].count() - a;
    out[i] = TimeTick{in[i].count() + std::llround(static_cast<long double>(dt) * k)};
  }
}

inline EventStream correct_frequency(const EventStream & stream, double du)
{
  require_sorted(stream.ticks, "correct_frequency");
  EventStream out = stream;
  if (!stream.empty() && du != 0.0) {
    correct_frequency(stream.ticks, stream.front(), du, out.ticks);
  }
  return out;
}

/// Correction that undoes a clock running fast by `du`: maps a clock with
/// frequency offset du back onto the reference rate.
constexpr double inverse_frequency(double du) { return -du / (1.0 + du); }

struct Coincidence
{
  TimeTick a;
  TimeTick b;
  TimeTick tau;  ///< a - b
  friend bool operator==(const Coincidence &, const Coincidence &) = default;
};

/// Pairs each a-event with the b-event whose tau = a - b lies closest to
/// `center`, if that tau is inside [center - window/2, center + window/2].
/// At most one pair per a-event. Ties on distance go to the earlier b-event.
inline std::vector<Coincidence> coincidence_pairs(
  std::span<const TimeTick> a, std::span<const TimeTick> b, TimeTick center, TimeTick window)
{
  if (window.count() <= 0) {
    throw ParameterError("coincidence_pairs: window must be positive");
  }
  require_sorted(a, "coincidence_pairs(a)");
  require_sorted(b, "coincidence_pairs(b)");
  std::vector<Coincidence> pairs;
  std::size_t j = 0;
  for (const TimeTick ta : a) {
    const std::int64_t target = ta.count() - center.count();
    while (j < b.size() && b[j].count() < target) {
      ++j;
    }
    // Candidates: last b before target (j-1) and first b at/after it (j).
    std::int64_t best = -1;
    std::int64_t best_dist = 0;
    if (j > 0) {
      best = static_cast<std::int64_t>(j - 1);
      best_dist = target - b[j - 1].count();
    }
    if (j < b.size()) {
      const std::int64_t d = b[j].count() - target;
      if (best < 0 || d < best_dist) {
        best = static_cast<std::int64_t>(j);
        best_dist = d;
      }
    }
    if (best >= 0 && 2 * best_dist <= window.count()) {
      const TimeTick tb = b[static_cast<std::size_t>(best)];
      pairs.push_back({ta, tb, ta - tb});
    }
  }
  return pairs;
}

inline std::vector<Coincidence> coincidence_pairs(
  const EventStream & a, const EventStream & b, TimeTick center, TimeTick window)
{
  return coincidence_pairs(a.ticks, b.ticks, center, window);
}

}  // namespace wcps

#endif  // WCPS__TIMETAG_HPP_
