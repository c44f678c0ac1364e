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

#ifndef WCPS__FFT_HPP_
#define WCPS__FFT_HPP_

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <span>

namespace wcps
{
namespace detail
{
struct FftwFree
{
  void operator()(void * p) const noexcept { fftw_free(p); }
};

struct RealPlans
{
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW planning is not reentrant; execution on fresh aligned arrays is.
inline std::mutex & planner_mutex()
{
  static std::mutex m;
  return m;
}

// Measured plans are much faster at large N but take about a minute each to
// create. They are used only when precomputed wisdom is supplied through
// WCPS_FFTW_WISDOM (see fftw-wisdom(1)); otherwise plans are estimated.
inline bool load_wisdom()
{
  const char * path = std::getenv("WCPS_FFTW_WISDOM");
  return path != nullptr && *path != '\0' && fftw_import_wisdom_from_filename(path) != 0;
}

inline fftw_plan plan_r2c(int n, double * in, fftw_complex * out, bool wisdom)
{
  fftw_plan p = nullptr;
  if (wisdom) {
    p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_MEASURE | FFTW_WISDOM_ONLY);
  }
  return p ? p : fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
}

inline fftw_plan plan_c2r(int n, fftw_complex * in, double * out, bool wisdom)
{
  fftw_plan p = nullptr;
  if (wisdom) {
    p = fftw_plan_dft_c2r_1d(n, in, out, FFTW_MEASURE | FFTW_WISDOM_ONLY);
  }
  return p ? p : fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
}

inline const RealPlans & real_plans(std::size_t n)
{
  static std::map<std::size_t, RealPlans> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  static const bool wisdom = load_wisdom();
  auto it = cache.find(n);
  if (it != cache.end()) {
    return it->second;
  }
  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n / 2 + 1));
  const int len = static_cast<int>(n);
  RealPlans plans;
  plans.forward = plan_r2c(len, in.get(), out.get(), wisdom);
  plans.inverse = plan_c2r(len, out.get(), in.get(), wisdom);
  return cache.emplace(n, plans).first->second;
}
}  // namespace detail

/// Real-input transform of length n with owned, SIMD-aligned buffers.
/// inverse() is unnormalized and overwrites the spectrum.
class RealFft
{
public:
  explicit RealFft(std::size_t n)
  : n_(n),
    plans_(&detail::real_plans(n)),
    real_(fftw_alloc_real(n)),
    spectrum_(fftw_alloc_complex(n / 2 + 1))
  {
  }

  std::size_t size() const noexcept { return n_; }
  std::span<double> real() noexcept { return {real_.get(), n_}; }
  const double * real_data() const noexcept { return real_.get(); }
  std::span<std::complex<double>> spectrum() noexcept
  {
    return {reinterpret_cast<std::complex<double> *>(spectrum_.get()), n_ / 2 + 1};
  }

  void forward() { fftw_execute_dft_r2c(plans_->forward, real_.get(), spectrum_.get()); }
  void inverse() { fftw_execute_dft_c2r(plans_->inverse, spectrum_.get(), real_.get()); }

private:
  std::size_t n_;
  const detail::RealPlans * plans_;
  std::unique_ptr<double, detail::FftwFree> real_;
  std::unique_ptr<fftw_complex, detail::FftwFree> spectrum_;
};

}  // namespace wcps

#endif  // WCPS__FFT_HPP_
