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

#ifndef WCPS__LIVE_HPP_
#define WCPS__LIVE_HPP_

#include <functional>
#include <vector>

#include "wcps/exchange.hpp"
#include "wcps/peaktrack.hpp"

namespace wcps
{
/// Appends the next block of local events to the vector; returns 0 at the end.
using BlockSource = std::function<std::size_t(std::vector<TimeTick> &)>;

struct LiveOptions
{
  /// Stop reading local events while this many wait for remote coverage.
  std::size_t max_pending = 1 << 20;
  int poll_ms = 50;
};

/// Initiator: tracks its local channel-a events against channel-b events
/// arriving from the peer and sends every served offset back.
inline std::vector<ServedSample> run_initiator(
  ExchangeSession & session, Tracker & tracker, const BlockSource & local, LiveOptions opt = {})
{
  const std::uint8_t ch_b = tracker.config().channel_b;
  std::vector<ServedSample> served;
  auto emit = [&](std::vector<ServedSample> v) {
    for (auto & s : v) {
      session.send_served(s.tau, s.du);
      served.push_back(s);
    }
  };
  std::vector<TimeTick> block;
  bool local_done = false;
  bool remote_done = false;
  while (!(local_done && remote_done)) {
    const bool starved = local_done || tracker.pending_a() >= opt.max_pending;
    if (!starved) {
      block.clear();
      if (local(block) == 0) {
        local_done = true;
      }
      for (const TimeTick t : block) {
        emit(tracker.push_a(t));
      }
    }
    for (auto & f : session.poll(starved ? opt.poll_ms : 0)) {
      auto * b = std::get_if<BatchFrame>(&f);
      if (b == nullptr || b->channel != ch_b) {
        continue;
      }
      if (b->ticks.empty()) {
        remote_done = true;
      }
      for (const TimeTick t : b->ticks) {
        emit(tracker.push_b(t));
      }
    }
    if (!remote_done && session.remote_closed()) {
      throw SessionError("session: peer closed before ending its channel");
    }
  }
  emit(tracker.finish());
  session.close();
  return served;
}

/// Responder: streams its local events on `channel` and collects the
/// offsets the initiator serves, until the initiator hangs up.
inline std::vector<ServedFrame> run_responder(
  ExchangeSession & session, std::uint8_t channel, const BlockSource & local, LiveOptions opt = {})
{
  std::vector<ServedFrame> served;
  std::vector<TimeTick> block;
  bool local_done = false;
  while (!session.remote_closed()) {
    if (!local_done) {
      block.clear();
      if (local(block) == 0) {
        local_done = true;
        session.end_channel(channel);
      } else {
        session.send_events(channel, block);
      }
    }
    for (auto & f : session.poll(local_done ? opt.poll_ms : 0)) {
      if (auto * s = std::get_if<ServedFrame>(&f)) {
        served.push_back(*s);
      }
    }
  }
  session.close();
  return served;
}

/// Block source over an in-memory stream.
inline BlockSource span_source(std::span<const TimeTick> ticks, std::size_t block = 1 << 14)
{
  return [ticks, block, i = std::size_t{0}](std::vector<TimeTick> & out) mutable {
    const std::size_t n = std::min(block, ticks.size() - i);
    out.insert(out.end(), ticks.begin() + static_cast<std::ptrdiff_t>(i),
               ticks.begin() + static_cast<std::ptrdiff_t>(i + n));
    i += n;
    return n;
  };
}

/// Block source over a timetag file reader.
inline BlockSource reader_source(TimetagReader & r, std::size_t block = 1 << 14)
{
  return [&r, block](std::vector<TimeTick> & out) { return r.done() ? 0 : r.read_block(out, block); };
}

}  // namespace wcps

#endif  // WCPS__LIVE_HPP_
