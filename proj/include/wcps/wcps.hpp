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

#ifndef WCPS__WCPS_HPP_
#define WCPS__WCPS_HPP_

#include "wcps/correlation.hpp"
#include "wcps/error.hpp"
#include "wcps/exchange.hpp"
#include "wcps/fft.hpp"
#include "wcps/io.hpp"
#include "wcps/live.hpp"
#include "wcps/peakfind.hpp"
#include "wcps/peaktrack.hpp"
#include "wcps/random.hpp"
#include "wcps/source_sim.hpp"
#include "wcps/stats.hpp"
#include "wcps/timetag.hpp"

namespace wcps
{
inline constexpr const char * kVersion = "0.1.0";
}

#endif  // WCPS__WCPS_HPP_
