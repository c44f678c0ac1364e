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

#ifndef WCPS__EXCHANGE_HPP_
#define WCPS__EXCHANGE_HPP_

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <set>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "wcps/error.hpp"
#include "wcps/io.hpp"

namespace wcps
{
/// Reliable ordered byte stream. write_all may be called from one thread
/// while read_some runs on another.
class ByteTransport
{
public:
  struct ReadResult
  {
    std::size_t n = 0;
    bool eof = false;
  };

  virtual ~ByteTransport() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Waits at most timeout_ms; n == 0 && !eof means nothing arrived.
  virtual ReadResult read_some(std::span<std::uint8_t> buf, int timeout_ms) = 0;
  /// Signals end of our output to the peer.
  virtual void shutdown_write() = 0;
};

inline std::string errno_text(const char * what)
{
  return std::string(what) + ": " + std::strerror(errno);
}

/// Socket or pipe pair. Owns the descriptors when asked to.
class FdTransport : public ByteTransport
{
public:
  FdTransport(int fd, bool own) : in_(fd), out_(fd), own_(own) {}
  FdTransport(int in_fd, int out_fd, bool own) : in_(in_fd), out_(out_fd), own_(own) {}
  FdTransport(const FdTransport &) = delete;
  FdTransport & operator=(const FdTransport &) = delete;

  ~FdTransport() override
  {
    if (own_) {
      if (out_ >= 0 && out_ != in_) {
        ::close(out_);
      }
      if (in_ >= 0) {
        ::close(in_);
      }
    }
  }

  void write_all(std::span<const std::uint8_t> bytes) override
  {
    std::size_t done = 0;
    while (done < bytes.size()) {
      ssize_t k = ::send(out_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (k < 0 && errno == ENOTSOCK) {
        k = ::write(out_, bytes.data() + done, bytes.size() - done);
      }
      if (k < 0) {
        if (errno == EINTR) {
          continue;
        }
        throw IoError(errno_text("transport write"));
      }
      done += static_cast<std::size_t>(k);
    }
  }

  ReadResult read_some(std::span<std::uint8_t> buf, int timeout_ms) override
  {
    pollfd p{in_, POLLIN, 0};
    int r = 0;
    do {
      r = ::poll(&p, 1, timeout_ms);
    } while (r < 0 && errno == EINTR);
    if (r < 0) {
      throw IoError(errno_text("transport poll"));
    }
    if (r == 0) {
      return {};
    }
    ssize_t k = 0;
    do {
      k = ::read(in_, buf.data(), buf.size());
    } while (k < 0 && errno == EINTR);
    if (k < 0) {
      if (errno == ECONNRESET) {
        return {0, true};
      }
      throw IoError(errno_text("transport read"));
    }
    return {static_cast<std::size_t>(k), k == 0};
  }

  void shutdown_write() override
  {
    if (::shutdown(out_, SHUT_WR) == 0) {
      return;
    }
    if (errno == ENOTSOCK && out_ != in_) {
      ::close(out_);
      out_ = -1;
    }
  }

private:
  int in_;
  int out_;
  bool own_;
};

inline void set_nodelay(int fd)
{
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

/// Listens on port (0 = any) and accepts one peer. `bound` receives the
/// actual port before blocking in accept.
inline int tcp_accept_one(
  const std::string & host, std::uint16_t port, const std::function<void(std::uint16_t)> & bound = {})
{
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo * res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res)) {
    throw IoError(std::string("resolve ") + host + ": " + ::gai_strerror(rc));
  }
  int ls = -1;
  for (addrinfo * a = res; a != nullptr; a = a->ai_next) {
    ls = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (ls < 0) {
      continue;
    }
    int one = 1;
    ::setsockopt(ls, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(ls, a->ai_addr, a->ai_addrlen) == 0 && ::listen(ls, 1) == 0) {
      break;
    }
    ::close(ls);
    ls = -1;
  }
  ::freeaddrinfo(res);
  if (ls < 0) {
    throw IoError(errno_text(("listen on port " + service).c_str()));
  }
  if (bound) {
    sockaddr_storage ss{};
    socklen_t len = sizeof(ss);
    ::getsockname(ls, reinterpret_cast<sockaddr *>(&ss), &len);
    const auto p = ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6 &>(ss).sin6_port
                                            : reinterpret_cast<sockaddr_in &>(ss).sin_port;
    bound(ntohs(p));
  }
  int fd = -1;
  do {
    fd = ::accept(ls, nullptr, nullptr);
  } while (fd < 0 && errno == EINTR);
  ::close(ls);
  if (fd < 0) {
    throw IoError(errno_text("accept"));
  }
  set_nodelay(fd);
  return fd;
}

/// Connects, retrying for up to retry_s while the peer is not yet listening.
inline int tcp_connect(const std::string & host, std::uint16_t port, double retry_s = 10.0)
{
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(retry_s);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  const std::string service = std::to_string(port);
  for (;;) {
    addrinfo * res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res)) {
      throw IoError(std::string("resolve ") + host + ": " + ::gai_strerror(rc));
    }
    for (addrinfo * a = res; a != nullptr; a = a->ai_next) {
      int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) {
        continue;
      }
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
        ::freeaddrinfo(res);
        set_nodelay(fd);
        return fd;
      }
      ::close(fd);
    }
    ::freeaddrinfo(res);
    if (std::chrono::steady_clock::now() > deadline) {
      throw IoError(errno_text(("connect to " + host + ":" + service).c_str()));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

enum class Role
{
  initiator,
  responder,
};

inline const char * to_string(Role r) { return r == Role::initiator ? "initiator" : "responder"; }

struct SessionConfig
{
  double batch_interval_s = 0.05;  ///< local events are framed at this cadence; 0 sends at once
  double heartbeat_s = 1.0;
  double peer_timeout_s = 3.0;     ///< silence longer than this is a lost peer
  std::size_t max_batch = 1 << 16;

  void validate() const
  {
    if (!(batch_interval_s >= 0.0) || !(heartbeat_s > 0.0) || !(peer_timeout_s > 0.0) ||
        max_batch == 0 || max_batch > kMaxBatchTicks) {
      throw ParameterError("session: invalid configuration");
    }
  }
};

/// One end of a timestamp exchange. A background writer frames queued local
/// events and heartbeats; poll() on the caller's thread decodes remote frames.
/// Both roles speak the same protocol; the role only labels who serves offsets.
class ExchangeSession
{
public:
  using Clock = std::chrono::steady_clock;

  ExchangeSession(Role role, ByteTransport & transport, SessionConfig cfg = {})
  : role_(role), io_(transport), cfg_(cfg)
  {
    cfg_.validate();
    last_rx_ = Clock::now();
    writer_ = std::thread([this] { write_loop(); });
  }

  ExchangeSession(const ExchangeSession &) = delete;
  ExchangeSession & operator=(const ExchangeSession &) = delete;

  ~ExchangeSession()
  {
    try {
      close();
    } catch (...) {
    }
  }

  Role role() const noexcept { return role_; }

  /// Queues local events; they go out at the next cadence tick.
  void send_events(std::uint8_t channel, std::span<const TimeTick> ticks)
  {
    if (ticks.empty()) {
      return;
    }
    std::lock_guard lk(mu_);
    rethrow_writer_error();
    if (ended_.count(channel) != 0U) {
      throw SessionError("session: channel " + std::to_string(channel) + " already ended");
    }
    auto & q = pending_[channel];
    const auto it = last_tx_.find(channel);
    if ((it != last_tx_.end() && ticks.front() < it->second) || !std::is_sorted(ticks.begin(), ticks.end())) {
      throw OrderingError("session: local events out of order on channel " + std::to_string(channel));
    }
    last_tx_[channel] = ticks.back();
    q.insert(q.end(), ticks.begin(), ticks.end());
    pending_count_ += ticks.size();
    if (cfg_.batch_interval_s == 0.0 || pending_count_ >= cfg_.max_batch) {
      flush_requested_ = true;
    }
    cv_.notify_one();
  }

  /// Flushes the channel and tells the peer no more events follow on it.
  void end_channel(std::uint8_t channel)
  {
    std::lock_guard lk(mu_);
    rethrow_writer_error();
    ended_.insert(channel);
    pending_[channel];
    end_order_.push_back(channel);
    flush_requested_ = true;
    cv_.notify_one();
  }

  void send_served(TimeTick tau, double du)
  {
    std::lock_guard lk(mu_);
    rethrow_writer_error();
    encode_frame(ServedFrame{tau, du_to_femto(du)}, control_);
    flush_requested_ = true;
    cv_.notify_one();
  }

  /// Blocks until everything queued so far is on the wire.
  void flush()
  {
    std::unique_lock lk(mu_);
    flush_requested_ = true;
    cv_.notify_one();
    idle_cv_.wait(lk, [this] {
      return writer_error_ || stop_ || (pending_count_ == 0 && control_.empty() && end_order_.empty() && !busy_);
    });
    rethrow_writer_error();
  }

  /// Remote batch and served frames that arrived within timeout_ms, in wire
  /// order. Heartbeats are absorbed.
  std::vector<Frame> poll(int timeout_ms)
  {
    {
      std::lock_guard lk(mu_);
      rethrow_writer_error();
    }
    std::vector<Frame> out;
    if (remote_closed_) {
      return out;
    }
    const auto start = Clock::now();
    int wait = timeout_ms;
    for (;;) {
      const auto r = io_.read_some(rxbuf_, std::min(wait, silence_budget_ms()));
      if (r.n > 0) {
        last_rx_ = Clock::now();
        decoder_.feed(std::span<const std::uint8_t>(rxbuf_.data(), r.n));
        drain(out);
        wait = 0;  // take whatever else is already buffered, then return
        continue;
      }
      if (r.eof) {
        remote_closed_ = true;
        if (decoder_.buffered() != 0) {
          throw SessionError(
            "session: peer closed mid-frame at byte " + std::to_string(decoder_.consumed()));
        }
        return out;
      }
      check_peer();
      const auto spent =
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
      if (!out.empty() || spent >= timeout_ms) {
        return out;
      }
      wait = static_cast<int>(timeout_ms - spent);
    }
  }

  bool remote_closed() const noexcept { return remote_closed_; }
  bool remote_ended(std::uint8_t channel) const { return remote_ended_.count(channel) != 0U; }

  /// Flushes, stops the writer and half-closes the transport.
  void close()
  {
    if (closed_) {
      return;
    }
    closed_ = true;
    std::exception_ptr err;
    try {
      flush();
    } catch (...) {
      err = std::current_exception();
    }
    {
      std::lock_guard lk(mu_);
      stop_ = true;
      cv_.notify_one();
    }
    writer_.join();
    io_.shutdown_write();
    if (err) {
      std::rethrow_exception(err);
    }
  }

private:
  int silence_budget_ms() const
  {
    const auto left = std::chrono::duration<double>(cfg_.peer_timeout_s) - (Clock::now() - last_rx_);
    return std::max(1, static_cast<int>(std::chrono::duration<double, std::milli>(left).count()) + 1);
  }

  void check_peer()
  {
    const double silent = std::chrono::duration<double>(Clock::now() - last_rx_).count();
    if (silent > cfg_.peer_timeout_s) {
      throw PeerLost("session: no frame from peer for " + std::to_string(silent) + " s");
    }
  }

  void drain(std::vector<Frame> & out)
  {
    try {
      while (auto f = decoder_.next()) {
        if (auto * b = std::get_if<BatchFrame>(&*f)) {
          if (b->ticks.empty()) {
            remote_ended_.insert(b->channel);
            out.push_back(std::move(*f));
            continue;
          }
          if (remote_ended_.count(b->channel) != 0U) {
            throw SessionError("session: batch after end of channel " + std::to_string(b->channel));
          }
          auto it = last_rx_tick_.find(b->channel);
          if (it != last_rx_tick_.end() && b->ticks.front() < it->second) {
            throw SessionError("session: remote channel " + std::to_string(b->channel) + " went backwards");
          }
          last_rx_tick_[b->channel] = b->ticks.back();
          out.push_back(std::move(*f));
        } else if (std::holds_alternative<ServedFrame>(*f)) {
          out.push_back(std::move(*f));
        }
      }
    } catch (const ParseError & e) {
      throw SessionError(std::string("session: malformed frame: ") + e.what());
    }
  }

  void rethrow_writer_error()
  {
    if (writer_error_) {
      std::rethrow_exception(writer_error_);
    }
  }

  // Writer thread ------------------------------------------------------------

  void write_loop()
  {
    using namespace std::chrono;
    const auto hb = duration_cast<Clock::duration>(duration<double>(cfg_.heartbeat_s));
    const auto cadence = duration_cast<Clock::duration>(duration<double>(cfg_.batch_interval_s));
    auto last_tx = Clock::now();
    auto last_flush = Clock::now();
    std::unique_lock lk(mu_);
    for (;;) {
      const auto now = Clock::now();
      const bool due = flush_requested_ || (pending_count_ > 0 && now - last_flush >= cadence);
      if (due && (pending_count_ > 0 || !control_.empty() || !end_order_.empty())) {
        std::vector<std::uint8_t> wire = take_frames();
        flush_requested_ = false;
        busy_ = true;
        lk.unlock();
        try {
          io_.write_all(wire);
        } catch (...) {
          lk.lock();
          writer_error_ = std::current_exception();
          busy_ = false;
          idle_cv_.notify_all();
          return;
        }
        lk.lock();
        busy_ = false;
        last_tx = last_flush = Clock::now();
        idle_cv_.notify_all();
        continue;
      }
      flush_requested_ = false;
      idle_cv_.notify_all();
      if (stop_) {
        return;
      }
      if (now - last_tx >= hb) {
        std::vector<std::uint8_t> wire = encode_frame(HeartbeatFrame{});
        lk.unlock();
        try {
          io_.write_all(wire);
        } catch (...) {
          lk.lock();
          writer_error_ = std::current_exception();
          idle_cv_.notify_all();
          return;
        }
        lk.lock();
        last_tx = Clock::now();
        continue;
      }
      auto wake = last_tx + hb;
      if (pending_count_ > 0) {
        wake = std::min(wake, last_flush + cadence);
      }
      cv_.wait_until(lk, wake);
    }
  }

  /// Serializes everything queued; called with the lock held.
  std::vector<std::uint8_t> take_frames()
  {
    std::vector<std::uint8_t> wire;
    for (auto & [ch, q] : pending_) {
      for (std::size_t i = 0; i < q.size(); i += cfg_.max_batch) {
        const std::size_t n = std::min(cfg_.max_batch, q.size() - i);
        BatchFrame b{ch, std::vector<TimeTick>(q.begin() + static_cast<std::ptrdiff_t>(i),
                                               q.begin() + static_cast<std::ptrdiff_t>(i + n))};
        encode_frame(b, wire);
      }
      q.clear();
    }
    pending_count_ = 0;
    wire.insert(wire.end(), control_.begin(), control_.end());
    control_.clear();
    for (const std::uint8_t ch : end_order_) {
      encode_frame(BatchFrame{ch, {}}, wire);
    }
    end_order_.clear();
    return wire;
  }

  Role role_;
  ByteTransport & io_;
  SessionConfig cfg_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<std::uint8_t, std::vector<TimeTick>> pending_;
  std::map<std::uint8_t, TimeTick> last_tx_;
  std::set<std::uint8_t> ended_;
  std::vector<std::uint8_t> end_order_;
  std::vector<std::uint8_t> control_;
  std::size_t pending_count_ = 0;
  bool flush_requested_ = false;
  bool busy_ = false;
  bool stop_ = false;
  std::exception_ptr writer_error_;
  std::thread writer_;

  // Reader side, touched only by poll().
  std::array<std::uint8_t, 1 << 16> rxbuf_{};
  FrameDecoder decoder_;
  Clock::time_point last_rx_;
  std::map<std::uint8_t, TimeTick> last_rx_tick_;
  std::set<std::uint8_t> remote_ended_;
  bool remote_closed_ = false;
  bool closed_ = false;
};

}  // namespace wcps

#endif  // WCPS__EXCHANGE_HPP_
