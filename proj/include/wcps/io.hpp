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

#ifndef WCPS__IO_HPP_
#define WCPS__IO_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "wcps/error.hpp"
#include "wcps/timetag.hpp"

namespace wcps
{
namespace le
{
template <typename T>
inline void put(std::uint8_t * p, T v)
{
  auto u = static_cast<std::make_unsigned_t<T>>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    p[i] = static_cast<std::uint8_t>(u >> (8 * i));
  }
}

template <typename T>
inline T get(const std::uint8_t * p)
{
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<std::make_unsigned_t<T>>(p[i]) << (8 * i);
  }
  return static_cast<T>(u);
}

template <typename T>
inline void append(std::vector<std::uint8_t> & out, T v)
{
  const std::size_t at = out.size();
  out.resize(at + sizeof(T));
  put<T>(out.data() + at, v);
}
}  // namespace le

// ---------------------------------------------------------------------------
// WCPT timestamp files
//
//   0  magic "WCPT"
//   4  u16 version (1)
//   6  u8  channel id
//   7  u8  reserved, zero
//   8  u64 tick resolution in femtoseconds (1000000)
//  16  u64 record count
//  24  count x i64 ticks
//
// All integers little-endian.

inline constexpr std::array<std::uint8_t, 4> kTimetagMagic{'W', 'C', 'P', 'T'};
inline constexpr std::uint16_t kTimetagVersion = 1;
inline constexpr std::uint64_t kTickResolutionFs = 1'000'000;
inline constexpr std::size_t kTimetagHeaderSize = 24;

inline std::array<std::uint8_t, kTimetagHeaderSize> encode_timetag_header(
  std::uint8_t channel, std::uint64_t count)
{
  std::array<std::uint8_t, kTimetagHeaderSize> h{};
  std::memcpy(h.data(), kTimetagMagic.data(), 4);
  le::put<std::uint16_t>(h.data() + 4, kTimetagVersion);
  h[6] = channel;
  h[7] = 0;
  le::put<std::uint64_t>(h.data() + 8, kTickResolutionFs);
  le::put<std::uint64_t>(h.data() + 16, count);
  return h;
}

namespace detail
{
inline void write_or_throw(std::ostream & os, const void * data, std::size_t n, const char * what)
{
  os.write(static_cast<const char *>(data), static_cast<std::streamsize>(n));
  if (!os) {
    throw IoError(std::string("write_timetags: failed writing ") + what);
  }
}

inline void encode_ticks(std::span<const TimeTick> ticks, std::vector<std::uint8_t> & buf)
{
  buf.resize(ticks.size() * 8);
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    le::put<std::int64_t>(buf.data() + 8 * i, ticks[i].count());
  }
}
}  // namespace detail

/// Writes a whole stream; returns the number of bytes written.
inline std::uint64_t write_timetags(const EventStream & stream, std::ostream & os)
{
  require_sorted(stream.ticks, "write_timetags");
  const auto h = encode_timetag_header(stream.channel_id, stream.size());
  detail::write_or_throw(os, h.data(), h.size(), "header");
  std::vector<std::uint8_t> buf;
  constexpr std::size_t kChunk = 1 << 16;
  for (std::size_t i = 0; i < stream.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, stream.size() - i);
    detail::encode_ticks(std::span<const TimeTick>(stream.ticks).subspan(i, n), buf);
    detail::write_or_throw(os, buf.data(), buf.size(), "records");
  }
  return kTimetagHeaderSize + 8 * static_cast<std::uint64_t>(stream.size());
}

/// Block-wise writer for streams that do not fit in memory. The count field
/// is patched on close(), so the sink must be seekable.
class TimetagWriter
{
public:
  TimetagWriter(std::ostream & os, std::uint8_t channel) : os_(os), channel_(channel)
  {
    start_ = os_.tellp();
    const auto h = encode_timetag_header(channel, 0);
    detail::write_or_throw(os_, h.data(), h.size(), "header");
  }

  void append(std::span<const TimeTick> ticks)
  {
    require_sorted(ticks, "TimetagWriter");
    if (!ticks.empty() && last_ && ticks.front() < *last_) {
      throw OrderingError("TimetagWriter: block starts before the previous one ended");
    }
    if (!ticks.empty()) {
      last_ = ticks.back();
    }
    detail::encode_ticks(ticks, buf_);
    detail::write_or_throw(os_, buf_.data(), buf_.size(), "records");
    count_ += ticks.size();
  }

  std::uint64_t close()
  {
    const auto end = os_.tellp();
    os_.seekp(start_ + std::streamoff(16));
    std::array<std::uint8_t, 8> c{};
    le::put<std::uint64_t>(c.data(), count_);
    detail::write_or_throw(os_, c.data(), c.size(), "record count");
    os_.seekp(end);
    os_.flush();
    if (!os_) {
      throw IoError("TimetagWriter: flush failed");
    }
    return kTimetagHeaderSize + 8 * count_;
  }

  std::uint64_t count() const noexcept { return count_; }

private:
  std::ostream & os_;
  std::uint8_t channel_;
  std::streampos start_;
  std::uint64_t count_ = 0;
  std::optional<TimeTick> last_;
  std::vector<std::uint8_t> buf_;
};

/// Streaming reader: validates the header up front, records block by block.
class TimetagReader
{
public:
  explicit TimetagReader(std::istream & is) : is_(is)
  {
    std::array<std::uint8_t, kTimetagHeaderSize> h{};
    is_.read(reinterpret_cast<char *>(h.data()), h.size());
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got >= 4 && std::memcmp(h.data(), kTimetagMagic.data(), 4) != 0) {
      throw ParseError("timetag file: bad magic", 0);
    }
    if (got < h.size()) {
      throw ParseError(
        "timetag file: truncated header, " + std::to_string(got) + " of 24 bytes", got);
    }
    const auto version = le::get<std::uint16_t>(h.data() + 4);
    if (version != kTimetagVersion) {
      throw ParseError("timetag file: unsupported version " + std::to_string(version), 4);
    }
    channel_ = h[6];
    if (h[7] != 0) {
      throw ParseError("timetag file: reserved byte is not zero", 7);
    }
    const auto res = le::get<std::uint64_t>(h.data() + 8);
    if (res != kTickResolutionFs) {
      throw ParseError("timetag file: unsupported tick resolution " + std::to_string(res) + " fs", 8);
    }
    count_ = le::get<std::uint64_t>(h.data() + 16);
  }

  std::uint8_t channel() const noexcept { return channel_; }
  std::uint64_t count() const noexcept { return count_; }
  std::uint64_t remaining() const noexcept { return count_ - read_; }
  bool done() const noexcept { return read_ == count_; }

  /// Up to max_records further records, appended to out.
  std::size_t read_block(std::vector<TimeTick> & out, std::size_t max_records = 1 << 16)
  {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(max_records, remaining()));
    buf_.resize(n * 8);
    is_.read(reinterpret_cast<char *>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    const auto got = static_cast<std::size_t>(is_.gcount());
    if (got < buf_.size()) {
      const std::uint64_t have = read_ + got / 8;
      throw ParseError(
        "timetag file: truncated payload, expected " + std::to_string(count_) + " records, found " +
          std::to_string(have),
        kTimetagHeaderSize + read_ * 8 + got);
    }
    out.reserve(out.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
      const TimeTick t{le::get<std::int64_t>(buf_.data() + 8 * i)};
      if (last_ && t < *last_) {
        throw ParseError(
          "timetag file: record " + std::to_string(read_ + i) + " decreases",
          kTimetagHeaderSize + (read_ + i) * 8);
      }
      last_ = t;
      out.push_back(t);
    }
    read_ += n;
    return n;
  }

private:
  std::istream & is_;
  std::uint8_t channel_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
  std::optional<TimeTick> last_;
  std::vector<std::uint8_t> buf_;
};

inline EventStream read_timetags(std::istream & is)
{
  TimetagReader r(is);
  EventStream s;
  s.channel_id = r.channel();
  // Reserve only what a sane file could hold; the count is untrusted.
  s.ticks.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(r.count(), 1u << 24)));
  while (!r.done()) {
    r.read_block(s.ticks);
  }
  if (!s.empty()) {
    // Unsigned: a hostile file may span more than the int64 range.
    const auto span = static_cast<std::uint64_t>(s.back().count()) -
                      static_cast<std::uint64_t>(s.front().count());
    s.duration_s = static_cast<double>(span) * 1e-12;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Exchange frames: u32 payload length, u8 type, payload.
//
//   batch     (0): u8 channel, n x i64 ticks; an empty batch ends the channel
//   served    (1): i64 tau_ps, i64 du in units of 1e-15
//   heartbeat (2): empty

enum class FrameType : std::uint8_t
{
  batch = 0,
  served = 1,
  heartbeat = 2,
};

struct BatchFrame
{
  std::uint8_t channel = 0;
  std::vector<TimeTick> ticks;
  friend bool operator==(const BatchFrame &, const BatchFrame &) = default;
};

struct ServedFrame
{
  TimeTick tau{0};
  std::int64_t du_femto = 0;
  double du() const { return static_cast<double>(du_femto) * 1e-15; }
  friend bool operator==(const ServedFrame &, const ServedFrame &) = default;
};

struct HeartbeatFrame
{
  friend bool operator==(const HeartbeatFrame &, const HeartbeatFrame &) = default;
};

using Frame = std::variant<BatchFrame, ServedFrame, HeartbeatFrame>;

inline constexpr std::size_t kFrameHeaderSize = 5;
inline constexpr std::uint32_t kMaxFramePayload = 16u << 20;
/// Most ticks one batch frame can carry.
inline constexpr std::size_t kMaxBatchTicks = (kMaxFramePayload - 1) / 8;

inline std::int64_t du_to_femto(double du) { return std::llround(du * 1e15); }

inline void encode_frame(const Frame & f, std::vector<std::uint8_t> & out)
{
  const std::size_t at = out.size();
  out.resize(at + kFrameHeaderSize);
  std::uint32_t len = 0;
  FrameType type = FrameType::heartbeat;
  if (const auto * b = std::get_if<BatchFrame>(&f)) {
    if (b->ticks.size() > kMaxBatchTicks) {
      throw ParameterError("encode_frame: batch exceeds the frame size limit");
    }
    type = FrameType::batch;
    len = static_cast<std::uint32_t>(1 + 8 * b->ticks.size());
    out.push_back(b->channel);
    for (const TimeTick t : b->ticks) {
      le::append<std::int64_t>(out, t.count());
    }
  } else if (const auto * s = std::get_if<ServedFrame>(&f)) {
    type = FrameType::served;
    len = 16;
    le::append<std::int64_t>(out, s->tau.count());
    le::append<std::int64_t>(out, s->du_femto);
  }
  le::put<std::uint32_t>(out.data() + at, len);
  out[at + 4] = static_cast<std::uint8_t>(type);
}

inline std::vector<std::uint8_t> encode_frame(const Frame & f)
{
  std::vector<std::uint8_t> out;
  encode_frame(f, out);
  return out;
}

namespace detail
{
/// Payload of a frame whose header has been read. `offset` is the stream
/// position of the header, for error messages.
inline Frame decode_payload(
  FrameType type, std::span<const std::uint8_t> p, std::uint64_t offset)
{
  switch (type) {
    case FrameType::batch: {
      if (p.empty() || (p.size() - 1) % 8 != 0) {
        throw ParseError("frame: batch payload length " + std::to_string(p.size()) + " is not 1+8n", offset);
      }
      BatchFrame b;
      b.channel = p[0];
      const std::size_t n = (p.size() - 1) / 8;
      b.ticks.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        b.ticks[i] = TimeTick{le::get<std::int64_t>(p.data() + 1 + 8 * i)};
        if (i > 0 && b.ticks[i] < b.ticks[i - 1]) {
          throw ParseError("frame: batch timestamps decrease", offset + kFrameHeaderSize + 1 + 8 * i);
        }
      }
      return b;
    }
    case FrameType::served: {
      if (p.size() != 16) {
        throw ParseError("frame: served payload must be 16 bytes", offset);
      }
      ServedFrame s;
      s.tau = TimeTick{le::get<std::int64_t>(p.data())};
      s.du_femto = le::get<std::int64_t>(p.data() + 8);
      return s;
    }
    case FrameType::heartbeat:
      if (!p.empty()) {
        throw ParseError("frame: heartbeat carries a payload", offset);
      }
      return HeartbeatFrame{};
  }
  throw ParseError("frame: unknown type " + std::to_string(static_cast<int>(type)), offset + 4);
}

inline FrameType check_header(std::span<const std::uint8_t> h, std::uint64_t offset, std::uint32_t & len)
{
  len = le::get<std::uint32_t>(h.data());
  if (len > kMaxFramePayload) {
    throw ParseError("frame: length " + std::to_string(len) + " exceeds the 16 MiB limit", offset);
  }
  const std::uint8_t t = h[4];
  if (t > static_cast<std::uint8_t>(FrameType::heartbeat)) {
    throw ParseError("frame: unknown type " + std::to_string(t), offset + 4);
  }
  return static_cast<FrameType>(t);
}
}  // namespace detail

/// Incremental decoder over an arbitrary split of the byte stream. Never
/// looks beyond the bytes a frame's header declares.
class FrameDecoder
{
public:
  void feed(std::span<const std::uint8_t> bytes)
  {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }

  /// Next complete frame, or nothing if more bytes are needed.
  std::optional<Frame> next()
  {
    const std::size_t avail = buf_.size() - pos_;
    if (avail < kFrameHeaderSize) {
      compact();
      return std::nullopt;
    }
    const std::span<const std::uint8_t> view(buf_.data() + pos_, avail);
    std::uint32_t len = 0;
    const FrameType type = detail::check_header(view.first(kFrameHeaderSize), consumed_, len);
    if (avail < kFrameHeaderSize + len) {
      compact();
      return std::nullopt;
    }
    Frame f = detail::decode_payload(type, view.subspan(kFrameHeaderSize, len), consumed_);
    pos_ += kFrameHeaderSize + len;
    consumed_ += kFrameHeaderSize + len;
    return f;
  }

  std::size_t buffered() const noexcept { return buf_.size() - pos_; }
  std::uint64_t consumed() const noexcept { return consumed_; }

private:
  void compact()
  {
    if (pos_ > 0) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
      pos_ = 0;
    }
  }

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::uint64_t consumed_ = 0;
};

/// Exactly one frame occupying all of `bytes`.
inline Frame decode_frame(std::span<const std::uint8_t> bytes)
{
  if (bytes.size() < kFrameHeaderSize) {
    throw ParseError("frame: truncated header", bytes.size());
  }
  std::uint32_t len = 0;
  const FrameType type = detail::check_header(bytes.first(kFrameHeaderSize), 0, len);
  if (bytes.size() - kFrameHeaderSize != len) {
    throw ParseError(
      "frame: declared length " + std::to_string(len) + " but " +
        std::to_string(bytes.size() - kFrameHeaderSize) + " payload bytes present",
      0);
  }
  return detail::decode_payload(type, bytes.subspan(kFrameHeaderSize), 0);
}

}  // namespace wcps

#endif  // WCPS__IO_HPP_
