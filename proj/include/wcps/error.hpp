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

#ifndef WCPS__ERROR_HPP_
#define WCPS__ERROR_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wcps
{
/// Base class of every error thrown by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error
{
public:
  Error(std::string kind, const std::string & what)
  : std::runtime_error(what), kind_(std::move(kind))
  {
  }
  const std::string & kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

class ParameterError : public Error
{
public:
  explicit ParameterError(const std::string & what) : Error("parameter", what) {}
};

class OrderingError : public Error
{
public:
  explicit OrderingError(const std::string & what) : Error("ordering", what) {}
};

class DataError : public Error
{
public:
  explicit DataError(const std::string & what) : Error("data", what) {}
};

class RangeError : public Error
{
public:
  explicit RangeError(const std::string & what) : Error("range", what) {}
};

class FitError : public Error
{
public:
  FitError(const std::string & what, double residual_norm)
  : Error("fit", what), residual_norm_(residual_norm)
  {
  }
  double residual_norm() const noexcept { return residual_norm_; }

private:
  double residual_norm_;
};

/// Malformed bytes in a file or frame; `offset()` is the byte position of
/// the first offending byte.
class ParseError : public Error
{
public:
  ParseError(const std::string & what, std::uint64_t offset)
  : Error("parse", what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset)
  {
  }
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

/// A sink or source failed at the operating-system level.
class IoError : public Error
{
public:
  explicit IoError(const std::string & what) : Error("io", what) {}
};

class SessionError : public Error
{
public:
  explicit SessionError(const std::string & what) : Error("session", what) {}
};

class PeerLost : public Error
{
public:
  explicit PeerLost(const std::string & what) : Error("peer_lost", what) {}
};

}  // namespace wcps

#endif  // WCPS__ERROR_HPP_
