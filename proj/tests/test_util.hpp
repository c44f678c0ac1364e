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


#ifndef WCPS_TESTS__TEST_UTIL_HPP_
#define WCPS_TESTS__TEST_UTIL_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "wcps/timetag.hpp"

namespace testutil
{
/// Homogeneous Poisson arrivals on [0, duration), drawn with the standard
/// library so the tests do not lean on the simulator.
inline std::vector<wcps::TimeTick> poisson_ticks(double rate, double duration_s, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(rate);
  std::vector<wcps::TimeTick> out;
  double t = gap(rng);
  while (t < duration_s) {
    out.push_back(wcps::TimeTick{std::llround(t * 1e12)});
    t += gap(rng);
  }
  return out;
}

inline wcps::EventStream poisson_stream(double rate, double duration_s, std::uint64_t seed, std::uint8_t ch = 1)
{
  wcps::EventStream s;
  s.channel_id = ch;
  s.ticks = poisson_ticks(rate, duration_s, seed);
  s.duration_s = duration_s;
  s.nominal_rate = rate;
  return s;
}

/// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path scratch_dir(const std::string & name)
{
  const auto dir = std::filesystem::temp_directory_path() / ("wcps_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double poisson_sigma(double mean) { return std::sqrt(std::max(mean, 1.0)); }

}  // namespace testutil

#endif  // WCPS_TESTS__TEST_UTIL_HPP_
