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

#ifndef WCPS__PEAKTRACK_HPP_
#define WCPS__PEAKTRACK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "wcps/error.hpp"
#include "wcps/timetag.hpp"

namespace wcps
{
struct TrackerConfig
{
  double beta_s = 0.05;  ///< EMA time constant
  TimeTick window = std::chrono::nanoseconds(256);
  double serve_interval_s = 0.537;
  double du_window_s = 10.74;  ///< regression window for the frequency estimate
  std::size_t du_min_samples = 4;
  TimeTick initial_tau{0};
  double initial_du = 0.0;
  std::optional<TimeTick> t_ref;  ///< a time initial_tau refers to; default first a event
  bool compensate = true;         ///< feed the du estimate back into the b time base
  double lost_timeout_s = 1.0;    ///< no pair for this long means tracking is lost
  int lost_intervals = 3;         ///< consecutive serve intervals without significant excess
  std::uint8_t channel_a = 1;
  std::uint8_t channel_b = 2;

  void validate() const
  {
    if (!(beta_s > 0.0)) {
      throw ParameterError("tracker: beta must be positive");
    }
    if (window.count() <= 0) {
      throw ParameterError("tracker: window must be positive");
    }
    if (!(serve_interval_s > 0.0) || !(du_window_s > 0.0)) {
      throw ParameterError("tracker: serve interval and du window must be positive");
    }
    if (!(std::abs(initial_du) < 1e-3)) {
      throw ParameterError("tracker: |initial_du| must be below 1e-3");
    }
    if (lost_intervals < 1 || !(lost_timeout_s > 0.0)) {
      throw ParameterError("tracker: loss criteria must be positive");
    }
  }
};

struct TrackerState
{
  double tau_filtered = 0.0;  ///< EMA offset t_a - b' in the corrected b time base, ticks
  double du_accum = 0.0;      ///< b frequency relative to a, product of the updates
  TimeTick last_pair_time{0};
  std::uint64_t pair_count = 0;
  double accidental_estimate = 0.0;  ///< expected accidental pairs per second
  double alpha = 0.0;
  bool lost = false;
  std::optional<TimeTick> lost_at;
};

/// One fixed-cadence output row. tau is t_a - t_b in raw timestamps at a time t.
struct ServedSample
{
  TimeTick t{0};
  TimeTick tau{0};
  double du = 0.0;
  double pairs_per_s = 0.0;
  double accidentals_per_s = 0.0;
  bool lost = false;

  double t_s() const { return to_seconds(t); }
};

/// Steady-state lag of the uncompensated EMA when tau drifts at -du per
/// second: each pair moves the estimate by alpha times its offset, but only
/// the signal share of pairs carries the drift, so the effective time
/// constant is beta / signal_fraction.
inline TimeTick expected_lag(double du, double beta_s, double signal_fraction = 1.0)
{
  if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
    throw ParameterError("expected_lag: signal fraction must lie in (0, 1]");
  }
  return seconds_to_ticks(du * beta_s / signal_fraction);
}

/// Expected accidental pairs per second under the one-pair-per-a-event
/// policy: an a event pairs by chance if any b event falls in the window.
inline double accidental_pair_rate(double s_a, double s_b, TimeTick window)
{
  return s_a * -std::expm1(-s_b * to_seconds(window));
}

/// Sequential tracker. Feed each channel in time order; the two feeds may be
/// interleaved arbitrarily, the output depends only on the event sets.
class Tracker
{
public:
  explicit Tracker(const TrackerConfig & cfg) : cfg_(cfg)
  {
    cfg_.validate();
    state_.du_accum = cfg_.initial_du;
    state_.tau_filtered = static_cast<double>(cfg_.initial_tau.count());
  }

  const TrackerConfig & config() const noexcept { return cfg_; }
  const TrackerState & state() const noexcept { return state_; }
  const std::vector<ServedSample> & log() const noexcept { return log_; }
  /// Channel-a events still waiting for channel-b coverage.
  std::size_t pending_a() const noexcept { return a_.size(); }

  /// Returns the samples served as a consequence of this event (often none).
  std::vector<ServedSample> push(std::uint8_t channel, TimeTick t)
  {
    if (channel == cfg_.channel_a) {
      return push_a(t);
    }
    if (channel == cfg_.channel_b) {
      return push_b(t);
    }
    throw ParameterError("tracker: unknown channel " + std::to_string(channel));
  }

  std::vector<ServedSample> push_a(TimeTick t)
  {
    if (last_a_ && t < *last_a_) {
      throw OrderingError("tracker: channel a timestamp went backwards");
    }
    last_a_ = t;
    a_.push_back(t);
    return process(false);
  }

  std::vector<ServedSample> push_b(TimeTick t)
  {
    if (last_b_ && t < *last_b_) {
      throw OrderingError("tracker: channel b timestamp went backwards");
    }
    last_b_ = t;
    b_.push_back(t);
    // b can trail a: events below the edge fixed at start() still count.
    if (started_ && t.count() <= interval_b_edge_) {
      ++interval_b_count_;
    }
    return process(false);
  }

  /// No more events: process everything buffered.
  std::vector<ServedSample> finish() { return process(true); }

private:
  struct Segment
  {
    std::int64_t b_raw;  ///< first raw b time of the segment
    double b_corr;       ///< its corrected time
    double c;            ///< correction slope - 1
  };

  double correct(std::int64_t b) const
  {
    const Segment & s = segment_for_raw(b);
    return s.b_corr + static_cast<double>(b - s.b_raw) * (1.0 + s.c);
  }

  double uncorrect(double x) const
  {
    auto it = std::upper_bound(
      map_.begin(), map_.end(), x, [](double v, const Segment & s) { return v < s.b_corr; });
    const Segment & s = it == map_.begin() ? map_.front() : *std::prev(it);
    return static_cast<double>(s.b_raw) + (x - s.b_corr) / (1.0 + s.c);
  }

  const Segment & segment_for_raw(std::int64_t b) const
  {
    auto it = std::upper_bound(
      map_.begin(), map_.end(), b, [](std::int64_t v, const Segment & s) { return v < s.b_raw; });
    return it == map_.begin() ? map_.front() : *std::prev(it);
  }

  void start(TimeTick first_a)
  {
    t_ref_ = cfg_.t_ref.value_or(first_a);
    const std::int64_t b_ref = (t_ref_ - cfg_.initial_tau).count();
    map_.push_back({b_ref, static_cast<double>(b_ref), inverse_frequency(cfg_.initial_du)});
    next_serve_ = 1;
    interval_start_ = t_ref_;
    interval_b_count_ = b_count_below(b_ref + 1);
    interval_b_edge_ = b_ref;
    state_.last_pair_time = t_ref_;
    started_ = true;
  }

  TimeTick serve_time(std::uint64_t k) const
  {
    return t_ref_ + seconds_to_ticks(cfg_.serve_interval_s * static_cast<double>(k));
  }

  /// Number of b events with raw time below x seen so far.
  std::uint64_t b_count_below(std::int64_t x) const
  {
    const auto it = std::lower_bound(b_.begin(), b_.end(), TimeTick{x});
    return b_dropped_ + static_cast<std::uint64_t>(it - b_.begin());
  }

  std::vector<ServedSample> process(bool final)
  {
    std::vector<ServedSample> out;
    const double half = 0.5 * static_cast<double>(cfg_.window.count());
    while (!a_.empty()) {
      const TimeTick ta = a_.front();
      if (!started_) {
        start(ta);
      }
      const double target = static_cast<double>(ta.count()) - state_.tau_filtered;
      const double need = uncorrect(target + half);
      if (!final && !(last_b_ && static_cast<double>(last_b_->count()) > need)) {
        break;
      }
      const TimeTick ts = serve_time(next_serve_);
      if (ta >= ts) {
        out.push_back(serve(ts));
        ++next_serve_;
        continue;
      }
      if (ta < t_ref_) {
        a_.pop_front();
        continue;
      }
      pair(ta, target, half);
      ++interval_a_;
      a_.pop_front();
      prune(target - 4.0 * half - 1e6);
    }
    return out;
  }

  void pair(TimeTick ta, double target, double half)
  {
    if (b_.empty()) {
      check_starvation(ta);
      return;
    }
    const double raw_target = uncorrect(target);
    auto j = std::lower_bound(b_.begin(), b_.end(), TimeTick{static_cast<std::int64_t>(std::floor(raw_target))});
    auto lo = j - std::min<std::ptrdiff_t>(2, j - b_.begin());
    auto hi = j + std::min<std::ptrdiff_t>(2, b_.end() - j);
    double best_d = std::numeric_limits<double>::infinity();
    double best_corr = 0.0;
    for (auto it = lo; it != hi; ++it) {
      const double bc = correct(it->count());
      const double d = std::abs(bc - target);
      if (d < best_d) {
        best_d = d;
        best_corr = bc;
      }
    }
    if (!(best_d <= half)) {
      check_starvation(ta);
      return;
    }
    ++interval_pairs_;
    ++state_.pair_count;
    // Mean pair separation: previous serve interval, or the running value
    // during the first one.
    const double sep = prev_pair_sep_ > 0.0
                         ? prev_pair_sep_
                         : to_seconds(ta - t_ref_) / static_cast<double>(state_.pair_count);
    state_.alpha = -std::expm1(-sep / cfg_.beta_s);
    const double rho = static_cast<double>(ta.count()) - best_corr;
    state_.tau_filtered += state_.alpha * (rho - state_.tau_filtered);
    state_.last_pair_time = ta;
  }

  void check_starvation(TimeTick ta)
  {
    if (!state_.lost && to_seconds(ta - state_.last_pair_time) > cfg_.lost_timeout_s) {
      mark_lost(ta);
    }
  }

  void mark_lost(TimeTick t)
  {
    if (!state_.lost) {
      state_.lost = true;
      state_.lost_at = t;
    }
  }

  ServedSample serve(TimeTick ts)
  {
    const double dt = to_seconds(ts - interval_start_);
    const double b_edge = uncorrect(static_cast<double>(ts.count()) - state_.tau_filtered);
    const auto b_edge_raw = static_cast<std::int64_t>(std::floor(b_edge));
    const std::uint64_t b_total = b_count_below(b_edge_raw + 1);
    const std::uint64_t nb = b_total - interval_b_count_;
    const double s_a = static_cast<double>(interval_a_) / dt;
    const double s_b = static_cast<double>(nb) / dt;
    const double acc_rate = accidental_pair_rate(s_a, s_b, cfg_.window);
    state_.accidental_estimate = acc_rate;

    ServedSample s;
    s.t = ts;
    s.tau = TimeTick{std::llround(static_cast<double>(ts.count()) - b_edge)};
    s.pairs_per_s = static_cast<double>(interval_pairs_) / dt;
    s.accidentals_per_s = acc_rate;

    // Loss: pair excess over accidentals below 3 sigma, several intervals
    // running, or starvation.
    const double expected = acc_rate * dt;
    const double excess = static_cast<double>(interval_pairs_) - expected;
    weak_intervals_ = excess < 3.0 * std::sqrt(std::max(expected, 1.0)) ? weak_intervals_ + 1 : 0;
    if (weak_intervals_ >= cfg_.lost_intervals) {
      mark_lost(ts);
    }
    check_starvation(ts);

    history_.push_back({ts, s.tau});
    while (!history_.empty() && to_seconds(ts - history_.front().first) > cfg_.du_window_s + 1e-9) {
      history_.pop_front();
    }
    if (cfg_.compensate && history_.size() >= std::max<std::size_t>(2, cfg_.du_min_samples)) {
      update_frequency(b_edge);
    }
    s.du = state_.du_accum;
    s.lost = state_.lost;

    prev_pair_sep_ = interval_pairs_ > 0 ? dt / static_cast<double>(interval_pairs_) : 0.0;
    interval_start_ = ts;
    interval_b_count_ = b_total;
    interval_b_edge_ = b_edge_raw;
    interval_a_ = 0;
    interval_pairs_ = 0;
    log_.push_back(s);
    return s;
  }

  /// tau(t) = tau0 - du (t - t0): du is minus the regression slope of the
  /// raw served offsets. Applied as a relative update so the accumulated
  /// offset is the product of the per-update factors.
  void update_frequency(double b_edge)
  {
    const auto t0 = history_.front().first;
    long double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const auto n = static_cast<long double>(history_.size());
    const auto y0 = history_.front().second.count();
    for (const auto & [t, tau] : history_) {
      const long double x = static_cast<long double>((t - t0).count());
      const long double y = static_cast<long double>(tau.count() - y0);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const long double den = n * sxx - sx * sx;
    if (den <= 0) {
      return;
    }
    const double target_du = static_cast<double>(-(n * sxy - sx * sy) / den);
    if (!(std::abs(target_du) < 1e-3)) {
      return;
    }
    const double step = (1.0 + target_du) / (1.0 + state_.du_accum) - 1.0;
    state_.du_accum = (1.0 + state_.du_accum) * (1.0 + step) - 1.0;
    const auto b_raw = static_cast<std::int64_t>(std::ceil(b_edge));
    if (b_raw > map_.back().b_raw) {
      map_.push_back({b_raw, correct(b_raw), inverse_frequency(state_.du_accum)});
    }
  }

  void prune(double corrected_before)
  {
    const double raw = uncorrect(corrected_before);
    while (b_.size() > 2 && static_cast<double>(b_[1].count()) < raw) {
      b_.pop_front();
      ++b_dropped_;
    }
  }

  TrackerConfig cfg_;
  TrackerState state_;
  std::vector<ServedSample> log_;
  std::deque<TimeTick> a_;
  std::deque<TimeTick> b_;
  std::uint64_t b_dropped_ = 0;
  std::optional<TimeTick> last_a_;
  std::optional<TimeTick> last_b_;
  std::vector<Segment> map_;
  bool started_ = false;
  TimeTick t_ref_{0};
  std::uint64_t next_serve_ = 1;
  TimeTick interval_start_{0};
  std::uint64_t interval_b_count_ = 0;  ///< b events at or below interval_b_edge_
  std::int64_t interval_b_edge_ = 0;
  std::uint64_t interval_a_ = 0;
  std::uint64_t interval_pairs_ = 0;
  double prev_pair_sep_ = 0.0;
  int weak_intervals_ = 0;
  std::deque<std::pair<TimeTick, TimeTick>> history_;
};

inline void write_tracking_csv(std::ostream & os, const std::vector<ServedSample> & log)
{
  os << "t_s,tau_ps,du_ppb,pairs_per_s,accidentals_per_s\n";
  os << std::setprecision(12);
  for (const auto & s : log) {
    os << s.t_s() << ',' << s.tau.count() << ',' << s.du * 1e9 << ',' << s.pairs_per_s << ','
       << s.accidentals_per_s << '\n';
  }
}

}  // namespace wcps

#endif  // WCPS__PEAKTRACK_HPP_
