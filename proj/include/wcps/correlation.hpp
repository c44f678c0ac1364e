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

#ifndef WCPS__CORRELATION_HPP_
#define WCPS__CORRELATION_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wcps/error.hpp"
#include "wcps/fft.hpp"
#include "wcps/timetag.hpp"

namespace wcps
{
struct GridParams
{
  int q = 20;
  TimeTick delta_t = std::chrono::nanoseconds(1024);
  TimeTick origin{0};

  std::size_t size() const { return std::size_t{1} << q; }
  TimeTick span() const { return delta_t * static_cast<std::int64_t>(size()); }
  double span_s() const { return to_seconds(span()); }

  void validate() const
  {
    if (q < 0 || q > 30) {
      throw ParameterError("grid: q must lie in [0, 30]");
    }
    if (delta_t.count() < 1) {
      throw ParameterError("grid: delta_t must be at least one tick");
    }
  }
  friend bool operator==(const GridParams &, const GridParams &) = default;
};

using Trace = std::vector<std::uint32_t>;

inline std::int64_t floor_div(std::int64_t a, std::int64_t b)
{
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) {
    --q;
  }
  return q;
}

/// Histogram of floor((t - origin) / delta_t) mod N into `trace`, which is
/// resized to N. Out-of-span events fold.
inline void bin_events_into(std::span<const TimeTick> ticks, const GridParams & grid, Trace & trace)
{
  grid.validate();
  const auto n = static_cast<std::int64_t>(grid.size());
  const std::int64_t o = grid.origin.count();
  const std::int64_t dt = grid.delta_t.count();
  const std::int64_t span = grid.span().count();
  trace.assign(grid.size(), 0);
  for (const TimeTick t : ticks) {
    const std::int64_t rel = t.count() - o;
    std::int64_t k;
    if (rel >= 0 && rel < span) {
      k = rel / dt;
    } else {
      k = floor_div(rel, dt) % n;
      if (k < 0) {
        k += n;
      }
    }
    ++trace[static_cast<std::size_t>(k)];
  }
}

inline Trace bin_events(std::span<const TimeTick> ticks, const GridParams & grid)
{
  Trace trace;
  bin_events_into(ticks, grid, trace);
  return trace;
}

inline Trace bin_events(const EventStream & stream, const GridParams & grid)
{
  return bin_events(stream.ticks, grid);
}

namespace detail
{
inline void check_trace_length(std::size_t n)
{
  if (n == 0 || !std::has_single_bit(n)) {
    throw ParameterError("xcorr: length must be a power of two");
  }
}

inline double trace_max(std::span<const std::uint32_t> t)
{
  return t.empty() ? 0.0 : static_cast<double>(*std::max_element(t.begin(), t.end()));
}
}  // namespace detail

/// Circular cross-correlation c[k] = sum_n a[n] * b[(n + k) mod N] through
/// real FFTs. A peak at lag k means b runs k bins behind a. Keeps the
/// transformed reference so that many b traces can be scanned against one a.
class Correlator
{
public:
  explicit Correlator(std::size_t n) : fft_(n), reference_(n / 2 + 1)
  {
    detail::check_trace_length(n);
  }

  std::size_t size() const noexcept { return fft_.size(); }

  void set_reference(std::span<const std::uint32_t> a)
  {
    if (a.size() != size()) {
      throw ParameterError("xcorr: traces differ in length");
    }
    auto in = fft_.real();
    std::copy(a.begin(), a.end(), in.begin());
    fft_.forward();
    auto spec = fft_.spectrum();
    std::copy(spec.begin(), spec.end(), reference_.begin());
    reference_max_ = detail::trace_max(a);
    has_reference_ = true;
  }

  void correlate(std::span<const std::uint32_t> b, std::vector<std::int64_t> & out)
  {
    if (b.size() != size()) {
      throw ParameterError("xcorr: traces differ in length");
    }
    auto in = staging();
    std::copy(b.begin(), b.end(), in.begin());
    correlate_staged(detail::trace_max(b));
    out.resize(size());
    for (std::size_t k = 0; k < size(); ++k) {
      out[k] = value(k);
    }
  }

  /// Input buffer for correlate_staged(); callers bin counts straight into
  /// it to skip a copy. Holds the unscaled result afterwards.
  std::span<double> staging() noexcept { return fft_.real(); }

  /// Correlates the staged trace, whose largest bin is b_max, against the
  /// reference. Read the result through value().
  void correlate_staged(double b_max)
  {
    if (!has_reference_) {
      throw ParameterError("xcorr: no reference trace set");
    }
    // Exact rounding needs every output well inside the 53-bit mantissa.
    if (static_cast<double>(size()) * reference_max_ * b_max >= 0x1p52) {
      throw RangeError("xcorr: N*max(a)*max(b) >= 2^52, integer result would not be exact");
    }
    fft_.forward();
    // Written out: std::complex multiplication goes through the NaN-aware
    // library routine.
    auto spec = fft_.spectrum();
    auto * s = reinterpret_cast<double *>(spec.data());
    const auto * r = reinterpret_cast<const double *>(reference_.data());
    for (std::size_t k = 0; k < 2 * spec.size(); k += 2) {
      const double re = s[k] * r[k] + s[k + 1] * r[k + 1];
      const double im = s[k + 1] * r[k] - s[k] * r[k + 1];
      s[k] = re;
      s[k + 1] = im;
    }
    fft_.inverse();
    scale_ = 1.0 / static_cast<double>(size());
  }

  /// Lag-k count after correlate_staged(). True values are non-negative and
  /// the rounding error is below 0.5.
  std::int64_t value(std::size_t k) const noexcept
  {
    return static_cast<std::int64_t>(fft_.real_data()[k] * scale_ + 0.5);
  }

private:
  RealFft fft_;
  std::vector<std::complex<double>> reference_;
  double reference_max_ = 0.0;
  double scale_ = 0.0;
  bool has_reference_ = false;
};

inline std::vector<std::int64_t> xcorr(
  std::span<const std::uint32_t> a, std::span<const std::uint32_t> b)
{
  if (a.size() != b.size()) {
    throw ParameterError("xcorr: traces differ in length");
  }
  detail::check_trace_length(a.size());
  Correlator c(a.size());
  c.set_reference(a);
  std::vector<std::int64_t> out;
  c.correlate(b, out);
  return out;
}

/// Coincidence counts over tau = t_a - t_b. Bin k covers
/// [origin + k*dt, origin + (k+1)*dt).
struct CorrelationHistogram
{
  GridParams grid;
  std::vector<std::int64_t> counts;
  std::vector<double> normalized;  ///< g2 estimate, empty until normalized
  std::vector<double> errors;      ///< 1 sigma on normalized
  std::uint64_t total_a = 0;
  std::uint64_t total_b = 0;

  std::size_t size() const noexcept { return counts.size(); }
  TimeTick lag_center(std::size_t k) const
  {
    return grid.origin + grid.delta_t * static_cast<std::int64_t>(k) + grid.delta_t / 2;
  }
};

/// Grid of 2^q bins of width dt whose middle bin is centered on tau = 0.
inline GridParams centered_lag_grid(int q, TimeTick dt)
{
  GridParams g;
  g.q = q;
  g.delta_t = dt;
  g.origin = -dt * static_cast<std::int64_t>(g.size() / 2) - dt / 2;
  g.validate();
  return g;
}

/// Every (a, b) pair whose tau falls inside the grid. Linear in the number of
/// pairs, suited to lag ranges of a few microseconds.
inline CorrelationHistogram pair_histogram(
  std::span<const TimeTick> a, std::span<const TimeTick> b, const GridParams & grid)
{
  grid.validate();
  require_sorted(a, "pair_histogram(a)");
  require_sorted(b, "pair_histogram(b)");
  CorrelationHistogram h;
  h.grid = grid;
  h.counts.assign(grid.size(), 0);
  h.total_a = a.size();
  h.total_b = b.size();
  const std::int64_t lo = grid.origin.count();
  const std::int64_t hi = lo + grid.span().count();
  const std::int64_t dt = grid.delta_t.count();
  std::size_t first = 0;
  for (const TimeTick ta : a) {
    // tau in [lo, hi)  <=>  t_b in (ta - hi, ta - lo]
    while (first < b.size() && b[first].count() <= ta.count() - hi) {
      ++first;
    }
    for (std::size_t j = first; j < b.size() && b[j].count() <= ta.count() - lo; ++j) {
      const std::int64_t tau = ta.count() - b[j].count();
      ++h.counts[static_cast<std::size_t>((tau - lo) / dt)];
    }
  }
  return h;
}

inline CorrelationHistogram pair_histogram(
  const EventStream & a, const EventStream & b, const GridParams & grid)
{
  return pair_histogram(a.ticks, b.ticks, grid);
}

/// FFT histogram of binned traces laid out on a centered lag grid: bin j holds
/// tau = (j - N/2) * dt, i.e. xcorr lag (N/2 - j) mod N.
inline CorrelationHistogram circular_histogram(
  const EventStream & a, const EventStream & b, const GridParams & trace_grid)
{
  const Trace ta = bin_events(a, trace_grid);
  const Trace tb = bin_events(b, trace_grid);
  const auto c = xcorr(ta, tb);
  CorrelationHistogram h;
  h.grid = centered_lag_grid(trace_grid.q, trace_grid.delta_t);
  h.total_a = a.size();
  h.total_b = b.size();
  const std::size_t n = trace_grid.size();
  h.counts.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    h.counts[j] = c[(n + n / 2 - j) % n];
  }
  return h;
}

/// counts / (s1 s2 dt T) with Poisson error bars.
inline CorrelationHistogram g2_normalize(
  const CorrelationHistogram & hist, double s1, double s2, double duration_s)
{
  if (!(s1 > 0.0 && s2 > 0.0 && duration_s > 0.0)) {
    throw ParameterError("g2_normalize: rates and duration must be positive");
  }
  CorrelationHistogram out = hist;
  const double accidental = s1 * s2 * to_seconds(hist.grid.delta_t) * duration_s;
  out.normalized.resize(hist.size());
  out.errors.resize(hist.size());
  for (std::size_t k = 0; k < hist.size(); ++k) {
    const auto c = static_cast<double>(hist.counts[k]);
    out.normalized[k] = c / accidental;
    out.errors[k] = std::sqrt(c) / accidental;
  }
  return out;
}

inline void write_histogram_csv(std::ostream & os, const CorrelationHistogram & hist)
{
  os << "lag_ps,counts,g2,g2_err\n";
  os << std::setprecision(12);
  const bool norm = hist.normalized.size() == hist.size();
  for (std::size_t k = 0; k < hist.size(); ++k) {
    os << hist.lag_center(k).count() << ',' << hist.counts[k] << ',';
    if (norm) {
      os << hist.normalized[k] << ',' << hist.errors[k];
    } else {
      os << ',';
    }
    os << '\n';
  }
}

struct G2Fit
{
  double amplitude = 0.0;  ///< A, so g2(0) = 1 + A
  double tau_c_s = 0.0;
  double tau0_s = 0.0;
  double amplitude_err = 0.0;
  double tau_c_err_s = 0.0;
  double tau0_err_s = 0.0;
  double chi2 = 0.0;
  int dof = 0;
  int iterations = 0;
  bool degenerate = false;

  double g2_0() const { return 1.0 + amplitude; }
};

namespace detail
{
// Model in nanoseconds: 1 + A exp(-2|x - x0| / w), p = (A, w, x0).
inline double g2_model(const Eigen::Vector3d & p, double x)
{
  return 1.0 + p[0] * std::exp(-2.0 * std::abs(x - p[2]) / p[1]);
}

inline Eigen::Vector3d g2_gradient(const Eigen::Vector3d & p, double x)
{
  const double d = x - p[2];
  const double e = std::exp(-2.0 * std::abs(d) / p[1]);
  const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
  return {e, p[0] * e * 2.0 * std::abs(d) / (p[1] * p[1]), p[0] * e * 2.0 * sgn / p[1]};
}
}  // namespace detail

/// Weighted Levenberg-Marquardt fit of 1 + A exp(-2|tau - tau0| / tau_c) to a
/// normalized histogram. Zero-error bins get the smallest nonzero error so
/// that empty tails still pull toward the baseline.
inline G2Fit fit_g2(const CorrelationHistogram & hist, int max_iterations = 200)
{
  const std::size_t n = hist.size();
  if (hist.normalized.size() != n || n < 10) {
    throw ParameterError("fit_g2: need a normalized histogram with at least 10 bins");
  }
  std::vector<double> x(n);
  std::vector<double> y = hist.normalized;
  std::vector<double> w(n, 1.0);
  double min_err = std::numeric_limits<double>::infinity();
  bool weighted = hist.errors.size() == n;
  if (weighted) {
    for (double e : hist.errors) {
      if (e > 0.0) {
        min_err = std::min(min_err, e);
      }
    }
    weighted = std::isfinite(min_err);
  }
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = static_cast<double>(hist.lag_center(k).count()) * 1e-3;
    if (weighted) {
      w[k] = 1.0 / std::max(hist.errors[k], min_err);
    }
  }
  const double dt_ns = static_cast<double>(hist.grid.delta_t.count()) * 1e-3;
  const double span_ns = dt_ns * static_cast<double>(n);

  G2Fit fit;
  fit.dof = static_cast<int>(n) - 3;
  const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double a0 = y[peak] - 1.0;
  if (!(a0 > 0.0)) {
    fit.degenerate = true;
    return fit;
  }
  std::size_t lo = peak;
  std::size_t hi = peak;
  while (lo > 0 && y[lo - 1] - 1.0 >= 0.5 * a0) {
    --lo;
  }
  while (hi + 1 < n && y[hi + 1] - 1.0 >= 0.5 * a0) {
    ++hi;
  }
  const double half_width = std::max(0.5 * dt_ns, 0.5 * (x[hi] - x[lo] + dt_ns));
  Eigen::Vector3d p(a0, 2.0 * half_width / std::log(2.0), x[peak]);

  auto chi2_at = [&](const Eigen::Vector3d & q) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = (y[k] - detail::g2_model(q, x[k])) * w[k];
      s += r * r;
    }
    return s;
  };

  double chi2 = chi2_at(p);
  double mu = 1e-3;
  Eigen::Matrix3d jtj;
  bool converged = false;
  int it = 0;
  for (; it < max_iterations; ++it) {
    jtj.setZero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::Vector3d g = detail::g2_gradient(p, x[k]) * w[k];
      const double r = (y[k] - detail::g2_model(p, x[k])) * w[k];
      jtj += g * g.transpose();
      jtr += g * r;
    }
    bool stepped = false;
    for (int tries = 0; tries < 40 && !stepped; ++tries) {
      Eigen::Matrix3d damped = jtj;
      damped.diagonal() += mu * jtj.diagonal().cwiseMax(1e-300);
      const Eigen::Vector3d step = damped.ldlt().solve(jtr);
      const Eigen::Vector3d trial = p + step;
      const double c2 = trial[1] > 0.0 && step.allFinite() ? chi2_at(trial)
                                                           : std::numeric_limits<double>::infinity();
      if (c2 <= chi2) {
        const double rel = step.cwiseAbs().cwiseQuotient(p.cwiseAbs().cwiseMax(1e-12)).maxCoeff();
        const double drop = chi2 - c2;
        p = trial;
        chi2 = c2;
        mu = std::max(mu / 3.0, 1e-12);
        stepped = true;
        if (rel < 1e-12 || drop <= 1e-15 * std::max(1.0, chi2)) {
          converged = true;
        }
      } else {
        mu *= 4.0;
      }
    }
    if (!stepped || converged) {
      // No downhill step at any damping: already at the minimum.
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw FitError("fit_g2: no convergence", std::sqrt(chi2));
  }
  fit.iterations = it;
  fit.chi2 = chi2;
  Eigen::Matrix3d cov = jtj.inverse();
  if (!weighted && fit.dof > 0) {
    cov *= chi2 / fit.dof;
  }
  fit.amplitude = p[0];
  fit.tau_c_s = p[1] * 1e-9;
  fit.tau0_s = p[2] * 1e-9;
  fit.amplitude_err = std::sqrt(std::max(0.0, cov(0, 0)));
  fit.tau_c_err_s = std::sqrt(std::max(0.0, cov(1, 1))) * 1e-9;
  fit.tau0_err_s = std::sqrt(std::max(0.0, cov(2, 2))) * 1e-9;
  fit.degenerate = !cov.allFinite() || !(fit.amplitude > 3.0 * fit.amplitude_err) ||
                   !(fit.tau_c_err_s < fit.tau_c_s) || p[1] > span_ns;
  return fit;
}

}  // namespace wcps

#endif  // WCPS__CORRELATION_HPP_
