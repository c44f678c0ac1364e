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

#ifndef WCPS__RANDOM_HPP_
#define WCPS__RANDOM_HPP_

#include <cstdint>
#include <limits>

namespace wcps
{
/// SplitMix64 finalizer. Used to derive independent sub-seeds from a run seed.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// hash(seed, stream_id): seeds for channels, trials and processes.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id) noexcept
{
  return mix64(seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1));
}

/// Small counter-based generator satisfying UniformRandomBitGenerator.
/// Cheap to construct, so Monte Carlo code can afford one per trial.
class SplitMix64
{
public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept
  {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

private:
  std::uint64_t state_;
};

}  // namespace wcps

#endif  // WCPS__RANDOM_HPP_
