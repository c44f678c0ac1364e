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

#ifndef WCPS__PEAKFIND_HPP_
#define WCPS__PEAKFIND_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wcps/correlation.hpp"
#include "wcps/error.hpp"
#include "wcps/stats.hpp"
#include "wcps/timetag.hpp"

namespace wcps
{
/// One correlation at one resolution. `tau` is t_a - t_b in raw (uncorrected)
/// timestamps for an a-event at grid.origin.
struct PeakCandidate
{
  TimeTick tau{0};
  std::int64_t lag = 0;  ///< signed bin index of the peak, 0 = expected position
  std::int64_t peak_counts = 0;
  double noise_mean = 0.0;
  double noise_sd = 0.0;
  double significance = 0.0;  ///< (peak - noise_mean) / noise_sd
  double threshold = 0.0;     ///< significance needed for acceptance
  std::size_t searched_bins = 0;
  std::size_t peak_multiplicity = 0;  ///< searched bins equal to the peak; > 1 is a tie
  double du = 0.0;  ///< frequency offset assumed for b during this correlation
  GridParams grid;
  bool accepted = false;
};

class NotFoundError : public Error
{
public:
  NotFoundError(const std::string & what, PeakCandidate best)
  : Error("not_found", what), best_(std::move(best))
  {
  }
  const PeakCandidate & best() const noexcept { return best_; }

private:
  PeakCandidate best_;
};

struct FindOptions
{
  /// Fixed acceptance threshold in noise sigmas. Unset: derived from the
  /// max-order quantile of the searched bins at false-accept rate alpha.
  std::optional<double> threshold_sigma;
  double alpha = 1e-3;
  /// Expected t_a - t_b at the a-window origin (in b's corrected time base).
  /// Unset: the b window starts as far after b's first event as the a window
  /// starts after a's.
  std::optional<TimeTick> expected_tau;
  /// Only lags within this many bins of the expected position; < 0 searches
  /// the whole circular range.
  std::int64_t search_radius = -1;
};

namespace detail
{
inline std::span<const TimeTick> slice(std::span<const TimeTick> t, std::int64_t lo, std::int64_t hi)
{
  auto first = std::lower_bound(t.begin(), t.end(), TimeTick{lo});
  auto last = std::lower_bound(first, t.end(), TimeTick{hi});
  return {first, last};
}

inline void check_coverage(
  std::span<const TimeTick> t, std::int64_t origin, std::int64_t span, const char * which)
{
  const std::int64_t slack = span / 100;
  if (t.empty() || t.front().count() > origin + slack || t.back().count() < origin + span - slack) {
    throw DataError(
      std::string("find: stream ") + which + " does not cover the correlation span [" +
      std::to_string(origin) + ", " + std::to_string(origin + span) + ") ps");
  }
}

/// Raw b time for corrected time x, given correction anchored at b0 for a
/// stream running at (1 + du) relative to a.
inline std::int64_t uncorrect(std::int64_t x, std::int64_t b0, double du)
{
  return x + std::llround(static_cast<long double>(x - b0) * du);
}
}  // namespace detail

/// Correlates successive b windows against one fixed a window.
class PeakSearch
{
public:
  PeakSearch(std::span<const TimeTick> a, const GridParams & grid) : grid_(grid), corr_(grid.size())
  {
    grid_.validate();
    detail::check_coverage(a, grid_.origin.count(), grid_.span().count(), "a");
    const auto win = detail::slice(a, grid_.origin.count(), grid_.origin.count() + grid_.span().count());
    corr_.set_reference(bin_events(win, grid_));
  }

  const GridParams & grid() const noexcept { return grid_; }

  /// b_window: b timestamps in the time base the lag refers to, starting at
  /// b_origin. Returned tau is in that same time base.
  PeakCandidate search(
    std::span<const TimeTick> b, TimeTick b_origin, const FindOptions & opt)
  {
    detail::check_coverage(b, b_origin.count(), grid_.span().count(), "b");
    return search_unchecked(b, b_origin, opt);
  }

  /// As search(), for callers that have already checked b's coverage.
  PeakCandidate search_unchecked(
    std::span<const TimeTick> b, TimeTick b_origin, const FindOptions & opt)
  {
    const std::int64_t o = b_origin.count();
    const std::int64_t span = grid_.span().count();
    const std::int64_t dt = grid_.delta_t.count();
    return search_binned(
      [&](std::span<double> bins) {
        double mx = 0.0;
        for (const TimeTick t : detail::slice(b, o, o + span)) {
          const std::int64_t rel = t.count() - o;
          if (rel >= 0 && rel < span) {
            mx = std::max(mx, ++bins[static_cast<std::size_t>(rel / dt)]);
          }
        }
        return mx;
      },
      b_origin, opt);
  }

  /// b already binned on this grid shifted to b_origin.
  PeakCandidate search_trace(const Trace & b, TimeTick b_origin, const FindOptions & opt)
  {
    if (b.size() != grid_.size()) {
      throw ParameterError("peak search: trace length differs from the grid");
    }
    return search_binned(
      [&](std::span<double> bins) {
        std::copy(b.begin(), b.end(), bins.begin());
        return detail::trace_max(b);
      },
      b_origin, opt);
  }

  /// fill(bins) adds b's counts to the zeroed bins and returns the largest.
  template <typename Fill>
  PeakCandidate search_binned(Fill && fill, TimeTick b_origin, const FindOptions & opt)
  {
    auto bins = corr_.staging();
    std::fill(bins.begin(), bins.end(), 0.0);
    const double b_max = fill(bins);
    corr_.correlate_staged(b_max);
    return evaluate(b_origin, opt);
  }

private:
  PeakCandidate evaluate(TimeTick b_origin, const FindOptions & opt) const
  {
    const auto n = static_cast<std::int64_t>(corr_.size());
    auto signed_lag = [n](std::int64_t k) { return k < n / 2 ? k : k - n; };
    auto index = [n](std::int64_t lag) { return ((lag % n) + n) % n; };

    std::int64_t lo = -(n / 2);
    std::int64_t hi = n - n / 2 - 1;
    if (opt.search_radius >= 0 && 2 * opt.search_radius + 1 < n) {
      lo = -opt.search_radius;
      hi = opt.search_radius;
    }
    // One pass: peak over the search range, plus shifted first and second
    // moments over every bin (the peak bin is taken out afterwards). Two
    // accumulators each keep the floating-point chain short.
    const bool full = hi - lo + 1 == n;
    const std::int64_t shift = corr_.value(0);
    std::int64_t best = -1;
    std::size_t at = 0;
    std::size_t ties = 0;
    std::int64_t s1 = 0;
    double s2a = 0.0;
    double s2b = 0.0;
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t k = 0; k + 1 < un; k += 2) {
      const std::int64_t v0 = corr_.value(k);
      const std::int64_t v1 = corr_.value(k + 1);
      if (full && v0 >= best) {
        ties = v0 > best ? 1 : ties + 1;
        at = v0 > best ? k : at;
        best = v0;
      }
      if (full && v1 >= best) {
        ties = v1 > best ? 1 : ties + 1;
        at = v1 > best ? k + 1 : at;
        best = v1;
      }
      const std::int64_t d0 = v0 - shift;
      const std::int64_t d1 = v1 - shift;
      s1 += d0 + d1;
      s2a += static_cast<double>(d0) * static_cast<double>(d0);
      s2b += static_cast<double>(d1) * static_cast<double>(d1);
    }
    if (un % 2 == 1) {
      const std::int64_t v = corr_.value(un - 1);
      if (full && v >= best) {
        ties = v > best ? 1 : ties + 1;
        at = v > best ? un - 1 : at;
        best = v;
      }
      s1 += v - shift;
      s2a += static_cast<double>(v - shift) * static_cast<double>(v - shift);
    }
    double s2 = s2a + s2b;
    std::int64_t best_lag = signed_lag(static_cast<std::int64_t>(at));
    if (!full) {
      ties = 0;
      for (std::int64_t lag = lo; lag <= hi; ++lag) {
        const std::int64_t v = corr_.value(static_cast<std::size_t>(index(lag)));
        if (v > best) {
          best = v;
          best_lag = lag;
          ties = 1;
        } else if (v == best) {
          ++ties;
        }
      }
    }
    const auto peak_index = static_cast<std::size_t>(index(best_lag));
    const std::int64_t dp = best - shift;
    s1 -= dp;
    s2 -= static_cast<double>(dp) * static_cast<double>(dp);
    const double others = static_cast<double>(n - 1);
    const double mean_shifted = n > 1 ? static_cast<double>(s1) / others : 0.0;
    const double mean = mean_shifted + static_cast<double>(shift);
    const double sq = s2 - static_cast<double>(s1) * mean_shifted;

    PeakCandidate pc;
    pc.grid = grid_;
    pc.lag = signed_lag(static_cast<std::int64_t>(peak_index));
    pc.peak_counts = best;
    pc.noise_mean = mean;
    pc.noise_sd = n > 2 ? std::sqrt(std::max(0.0, sq) / (others - 1.0)) : 0.0;
    pc.searched_bins = static_cast<std::size_t>(hi - lo + 1);
    pc.peak_multiplicity = ties;
    if (opt.threshold_sigma) {
      pc.threshold = *opt.threshold_sigma;
    } else if (pc.noise_mean > 0.0) {
      const auto x = max_order_quantile(pc.noise_mean, pc.searched_bins, opt.alpha);
      pc.threshold = (static_cast<double>(x) - pc.noise_mean) / std::sqrt(pc.noise_mean);
    }
    const double excess = static_cast<double>(best) - pc.noise_mean;
    if (pc.noise_sd > 0.0) {
      pc.significance = excess / pc.noise_sd;
    } else {
      pc.significance = excess > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    pc.accepted = excess > 0.0 && pc.significance > pc.threshold;
    // peak at lag k: t_b - b_origin = t_a - a_origin + k dt
    pc.tau = grid_.origin - b_origin - grid_.delta_t * best_lag;
    return pc;
  }

  GridParams grid_;
  Correlator corr_;
};

namespace detail
{
inline TimeTick default_b_origin(
  std::span<const TimeTick> a, std::span<const TimeTick> b, TimeTick a_origin)
{
  if (a.empty() || b.empty()) {
    throw DataError("find: empty stream");
  }
  return b.front() + (a_origin - a.front());
}

/// Correlate the a window of `search` against b corrected for frequency
/// offset du (b relative to a). expected_tau is in raw b time; the returned
/// candidate's tau is raw as well.
inline PeakCandidate search_corrected(
  PeakSearch & search, std::span<const TimeTick> a, std::span<const TimeTick> b, double du,
  const FindOptions & opt)
{
  const GridParams & g = search.grid();
  const std::int64_t b0 = b.front().count();
  const double corr = inverse_frequency(du);
  const std::int64_t o_a = g.origin.count();
  // b origin in corrected coordinates; b0 is a fixed point of the correction.
  std::int64_t o_b;
  if (opt.expected_tau) {
    const std::int64_t raw = o_a - opt.expected_tau->count();
    o_b = raw + std::llround(static_cast<long double>(raw - b0) * corr);
  } else {
    o_b = default_b_origin(a, b, g.origin).count();
  }
  const std::int64_t span = g.span().count();
  if (b.front().count() > o_b + span / 100 || uncorrect(o_b + span - span / 100, b0, du) > b.back().count()) {
    throw DataError("find: stream b does not cover the correlation span");
  }
  // Correct and bin in one pass. Double precision is ample here: the shift
  // is at most |du| times a span far below 2^53 ticks.
  const std::int64_t dt = g.delta_t.count();
  const auto window = slice(b, uncorrect(o_b, b0, du) - 1000, uncorrect(o_b + span, b0, du) + 1000);
  PeakCandidate pc = search.search_binned(
    [&](std::span<double> bins) {
      double mx = 0.0;
      for (const TimeTick t : window) {
        const std::int64_t x = t.count() + std::llround(static_cast<double>(t.count() - b0) * corr);
        const std::int64_t rel = x - o_b;
        if (rel >= 0 && rel < span) {
          mx = std::max(mx, ++bins[static_cast<std::size_t>(rel / dt)]);
        }
      }
      return mx;
    },
    TimeTick{o_b}, opt);
  pc.du = du;
  // pc.tau is o_a minus the corrected b time of the match; map back to raw.
  const std::int64_t b_match = o_a - pc.tau.count();
  pc.tau = TimeTick{o_a - uncorrect(b_match, b0, du)};
  return pc;
}
}  // namespace detail

inline PeakCandidate find_once(
  std::span<const TimeTick> a, std::span<const TimeTick> b, const GridParams & grid,
  const FindOptions & opt = {})
{
  require_sorted(a, "find_once(a)");
  require_sorted(b, "find_once(b)");
  if (a.empty() || b.empty()) {
    throw DataError("find_once: empty stream");
  }
  PeakSearch search(a, grid);
  const TimeTick o_b =
    opt.expected_tau ? grid.origin - *opt.expected_tau : detail::default_b_origin(a, b, grid.origin);
  return search.search(b, o_b, opt);
}

inline PeakCandidate find_once(
  const EventStream & a, const EventStream & b, const GridParams & grid, double threshold_sigma)
{
  FindOptions opt;
  opt.threshold_sigma = threshold_sigma;
  return find_once(a.ticks, b.ticks, grid, opt);
}

inline PeakCandidate find_once(
  const EventStream & a, const EventStream & b, const GridParams & grid, const FindOptions & opt = {})
{
  return find_once(a.ticks, b.ticks, grid, opt);
}

struct SweepResult
{
  double du = 0.0;
  PeakCandidate best;
  std::vector<PeakCandidate> points;  ///< one per evaluated du, in sweep order
  bool degenerate = false;            ///< step exceeded the range: one evaluation
};

/// du values center + k*step for |k*step| <= half_range.
inline std::vector<double> sweep_grid(double center, double half_range, double step)
{
  if (!(step > 0.0)) {
    throw ParameterError("sweep: du_step must be positive");
  }
  if (!(half_range >= 0.0)) {
    throw ParameterError("sweep: du range must be non-negative");
  }
  const auto k = static_cast<std::int64_t>(std::floor(half_range / step + 1e-9));
  std::vector<double> out;
  for (std::int64_t i = -k; i <= k; ++i) {
    out.push_back(center + static_cast<double>(i) * step);
  }
  return out;
}

/// Precompensation sweep over du in [du_lo, du_hi] (b relative to a). The
/// winner has the largest significance among accepted points; ties go to the
/// lower du.
inline SweepResult sweep_precompensation(
  std::span<const TimeTick> a, std::span<const TimeTick> b, const GridParams & grid, double du_lo,
  double du_hi, double du_step, const FindOptions & opt = {})
{
  require_sorted(a, "sweep(a)");
  require_sorted(b, "sweep(b)");
  if (a.empty() || b.empty()) {
    throw DataError("sweep: empty stream");
  }
  if (du_hi < du_lo) {
    throw ParameterError("sweep: du range is empty");
  }
  SweepResult r;
  const auto dus = sweep_grid(0.5 * (du_lo + du_hi), 0.5 * (du_hi - du_lo), du_step);
  r.degenerate = dus.size() == 1;
  PeakSearch search(a, grid);
  std::optional<std::size_t> best_accepted;
  std::size_t best_any = 0;
  for (const double du : dus) {
    r.points.push_back(detail::search_corrected(search, a, b, du, opt));
    const std::size_t i = r.points.size() - 1;
    const auto & pc = r.points[i];
    if (pc.significance > r.points[best_any].significance) {
      best_any = i;
    }
    if (pc.accepted && (!best_accepted || pc.significance > r.points[*best_accepted].significance)) {
      best_accepted = i;
    }
  }
  if (!best_accepted) {
    throw NotFoundError(
      "sweep: no correlation peak accepted at any of " + std::to_string(dus.size()) +
        " frequency offsets (best significance " +
        std::to_string(r.points[best_any].significance) + " sigma)",
      r.points[best_any]);
  }
  r.best = r.points[*best_accepted];
  r.du = r.best.du;
  return r;
}

inline SweepResult sweep_precompensation(
  const EventStream & a, const EventStream & b, const GridParams & grid, double du_lo, double du_hi,
  double du_step, const FindOptions & opt = {})
{
  return sweep_precompensation(a.ticks, b.ticks, grid, du_lo, du_hi, du_step, opt);
}

/// Offset (t_a - t_b at a-time t_ref) and frequency offset of b relative to
/// a; tau at other times follows tau_at().
struct FindResult
{
  TimeTick tau{0};
  double du = 0.0;
  TimeTick t_ref{0};
  std::vector<PeakCandidate> levels;       ///< early-segment candidate per level
  std::vector<PeakCandidate> late_levels;  ///< late-segment candidates used for du
  bool accepted = false;
  bool warning = false;  ///< refinement stopped early at the last good level
  std::string reason;
  bool degenerate_sweep = false;

  TimeTick resolution() const { return levels.empty() ? TimeTick{0} : levels.back().grid.delta_t; }
  TimeTick tau_at(TimeTick t_a) const
  {
    return tau - TimeTick{std::llround(static_cast<long double>((t_a - t_ref).count()) * du)};
  }
};

namespace detail
{
/// End of the overlap of the two streams, in a time.
inline std::int64_t overlap_end(
  std::span<const TimeTick> a, std::span<const TimeTick> b, TimeTick tau, TimeTick t_ref, double du)
{
  const long double b_ref = static_cast<long double>((t_ref - tau).count());
  const long double b_end_in_a =
    static_cast<long double>(t_ref.count()) + (b.back().count() - b_ref) / (1.0L + du);
  return std::min<std::int64_t>(a.back().count(), static_cast<std::int64_t>(b_end_in_a));
}

/// Start of the overlap of the two streams, in a time.
inline std::int64_t overlap_start(
  std::span<const TimeTick> a, std::span<const TimeTick> b, TimeTick tau, TimeTick t_ref, double du)
{
  const long double b_ref = static_cast<long double>((t_ref - tau).count());
  const long double b_start_in_a =
    static_cast<long double>(t_ref.count()) + (b.front().count() - b_ref) / (1.0L + du);
  return std::max<std::int64_t>(a.front().count(), static_cast<std::int64_t>(std::ceil(b_start_in_a)));
}

inline PeakCandidate locate(
  std::span<const TimeTick> a, std::span<const TimeTick> b, const GridParams & grid, double du,
  std::optional<TimeTick> expected_tau, std::int64_t radius, const FindOptions & base)
{
  PeakSearch search(a, grid);
  FindOptions opt = base;
  opt.expected_tau = expected_tau;
  opt.search_radius = radius;
  return search_corrected(search, a, b, du, opt);
}
}  // namespace detail

struct DuEstimate
{
  double du = 0.0;
  double sigma = 0.0;  ///< from the +-dt/2 quantization of each tau
  PeakCandidate early;
  PeakCandidate late;
  double separation_s = 0.0;
};

/// du from the drift of tau between the first and the last grid-length
/// segment of the overlap. tau/du seed the search: b is corrected by du first
/// and both windows are centered on the predicted offset (full circular
/// search).
inline DuEstimate estimate_du(
  std::span<const TimeTick> a, std::span<const TimeTick> b, const GridParams & grid, TimeTick tau,
  double du = 0.0, const FindOptions & opt = {})
{
  require_sorted(a, "estimate_du(a)");
  require_sorted(b, "estimate_du(b)");
  if (a.empty() || b.empty()) {
    throw DataError("estimate_du: empty stream");
  }
  const std::int64_t span = grid.span().count();
  const std::int64_t end = detail::overlap_end(a, b, tau, grid.origin, du);
  const std::int64_t late_origin = end - span;
  if (late_origin < grid.origin.count() + span) {
    throw DataError("estimate_du: streams must overlap for at least two segment lengths");
  }
  DuEstimate e;
  e.early = detail::locate(a, b, grid, du, tau, opt.search_radius, opt);
  GridParams late = grid;
  late.origin = TimeTick{late_origin};
  FindResult seed;
  seed.tau = tau;
  seed.du = du;
  seed.t_ref = grid.origin;
  e.late = detail::locate(a, b, late, du, seed.tau_at(late.origin), opt.search_radius, opt);
  if (!e.early.accepted || !e.late.accepted) {
    throw DataError(
      std::string("estimate_du: ") + (e.early.accepted ? "late" : "early") +
      " segment peak rejected");
  }
  const long double dt = static_cast<long double>(late_origin - grid.origin.count());
  e.separation_s = static_cast<double>(dt * 1e-12L);
  e.du = static_cast<double>(-static_cast<long double>((e.late.tau - e.early.tau).count()) / dt);
  e.sigma = static_cast<double>(grid.delta_t.count()) / std::sqrt(3.0) / static_cast<double>(dt);
  return e;
}

inline DuEstimate estimate_du(
  const EventStream & a, const EventStream & b, const GridParams & grid, TimeTick tau,
  double du = 0.0, const FindOptions & opt = {})
{
  return estimate_du(a.ticks, b.ticks, grid, tau, du, opt);
}

/// Halve dt level by level at fixed N, re-centering each level on the prior
/// estimate and re-measuring du from the early and late segments. A level
/// whose peak is rejected ends refinement with the last good estimate.
inline FindResult refine(
  std::span<const TimeTick> a, std::span<const TimeTick> b, const FindResult & initial,
  TimeTick target_delta_t, const FindOptions & opt = {})
{
  if (!initial.accepted || initial.levels.empty()) {
    throw ParameterError("refine: initial result must be accepted");
  }
  if (target_delta_t.count() < 1) {
    throw ParameterError("refine: target resolution must be at least one tick");
  }
  FindResult r = initial;
  GridParams grid = initial.levels.back().grid;
  if (target_delta_t >= grid.delta_t) {
    return r;
  }
  // Segments must lie inside both streams; move the reference point if b
  // started recording after a.
  const std::int64_t start = detail::overlap_start(a, b, r.tau, r.t_ref, r.du);
  if (start > r.t_ref.count()) {
    r.tau = r.tau_at(TimeTick{start});
    r.t_ref = TimeTick{start};
  }
  grid.origin = r.t_ref;
  FindOptions full = opt;
  full.search_radius = -1;
  try {
    // Level 0 only improves du: same dt, full search over the late segment.
    const DuEstimate e0 = estimate_du(a, b, grid, r.tau, r.du, full);
    r.du = e0.du;
    r.late_levels.push_back(e0.late);
  } catch (const DataError & ex) {
    r.warning = true;
    r.reason = std::string("refine: du re-estimate failed: ") + ex.what();
    return r;
  }
  TimeTick dt = grid.delta_t;
  while (dt > target_delta_t) {
    const TimeTick next = std::max(target_delta_t, dt / 2);
    FindOptions local = opt;
    local.search_radius = 4 * (dt.count() / next.count()) + 2;
    GridParams g = grid;
    g.delta_t = next;
    try {
      const DuEstimate e = estimate_du(a, b, g, r.tau, r.du, local);
      r.tau = e.early.tau;
      r.du = e.du;
      r.levels.push_back(e.early);
      r.late_levels.push_back(e.late);
    } catch (const DataError & ex) {
      r.warning = true;
      r.reason = "refine: peak lost at dt=" + std::to_string(next.count()) + " ps: " + ex.what();
      return r;
    }
    dt = next;
  }
  return r;
}

inline FindResult refine(
  const EventStream & a, const EventStream & b, const FindResult & initial, TimeTick target_delta_t,
  const FindOptions & opt = {})
{
  return refine(a.ticks, b.ticks, initial, target_delta_t, opt);
}

struct FindConfig
{
  int q = 20;
  TimeTick delta_t = std::chrono::nanoseconds(1024);
  std::optional<TimeTick> origin;  ///< a-window start; default a's first event
  double du_center = 0.0;
  double du_range = ppm(10);  ///< half-width of the sweep
  double du_step = ppb(100);
  TimeTick target_delta_t = std::chrono::nanoseconds(128);
  double alpha = 1e-3;
};

/// Sweep, then refine down to the target resolution.
inline FindResult find_offset(std::span<const TimeTick> a, std::span<const TimeTick> b, const FindConfig & cfg)
{
  if (a.empty() || b.empty()) {
    throw DataError("find: empty stream");
  }
  GridParams grid;
  grid.q = cfg.q;
  grid.delta_t = cfg.delta_t;
  grid.origin = cfg.origin.value_or(a.front());
  FindOptions opt;
  opt.alpha = cfg.alpha;
  const SweepResult s = sweep_precompensation(
    a, b, grid, cfg.du_center - cfg.du_range, cfg.du_center + cfg.du_range, cfg.du_step, opt);
  FindResult r;
  r.tau = s.best.tau;
  r.du = s.du;
  r.t_ref = grid.origin;
  r.levels.push_back(s.best);
  r.accepted = true;
  r.degenerate_sweep = s.degenerate;
  return refine(a, b, r, cfg.target_delta_t, opt);
}

inline FindResult find_offset(const EventStream & a, const EventStream & b, const FindConfig & cfg)
{
  return find_offset(a.ticks, b.ticks, cfg);
}

/// Re-acquisition after tracking is lost: search again from the loss time,
/// trying only the last frequency estimate and its +-100 ppb neighbours.
inline FindConfig recovery_config(const FindConfig & base, double last_du, TimeTick t_lost)
{
  FindConfig cfg = base;
  cfg.du_center = last_du;
  cfg.du_range = ppb(100);
  cfg.du_step = ppb(100);
  cfg.origin = t_lost;
  return cfg;
}

/// last_tau is the served t_a - t_b at t_lost; b is cut at the matching raw
/// time so both windows start together.
inline FindResult recover_offset(
  std::span<const TimeTick> a, std::span<const TimeTick> b, TimeTick last_tau, double last_du,
  TimeTick t_lost, const FindConfig & base = {})
{
  const FindConfig cfg = recovery_config(base, last_du, t_lost);
  const std::span<const TimeTick> as(std::lower_bound(a.begin(), a.end(), t_lost), a.end());
  const std::span<const TimeTick> bs(std::lower_bound(b.begin(), b.end(), t_lost - last_tau), b.end());
  if (as.empty() || bs.empty()) {
    throw DataError("recover: no events after the loss time");
  }
  return find_offset(as, bs, cfg);
}

/// b re-expressed on a's time base: t_b -> t_ref + (t_b - (t_ref - tau)) / (1 + du).
/// After this, a coincident pair has t_a - t_b near zero.
inline EventStream align_to_a(const EventStream & b, TimeTick tau, double du, TimeTick t_ref)
{
  require_sorted(b.ticks, "align_to_a");
  EventStream out = b;
  const std::int64_t b_ref = (t_ref - tau).count();
  const long double scale = 1.0L / (1.0L + du);
  for (auto & t : out.ticks) {
    t = TimeTick{t_ref.count() + std::llround(static_cast<long double>(t.count() - b_ref) * scale)};
  }
  return out;
}

}  // namespace wcps

#endif  // WCPS__PEAKFIND_HPP_
