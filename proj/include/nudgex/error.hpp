#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nudgex {

/// Error categories shared by every module. The HTTP layer maps these onto
/// status codes and the CLI onto exit codes, so keep the list stable.
enum class Errc {
  io,
  parse,
  format,
  not_found,
  conflict,
  range,
  unsupported_feature,
  unsupported_latitude,
  empty_window,
  dimension,
  missing_band,
  unknown_index,
  argument,
  precondition,
  transport,
  empty_response,
  judge_format,
  grounding_unavailable,
  stage_order,
  busy,
  config,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

/// Raised by the GeoTIFF and other binary parsers; carries the byte offset
/// at which decoding stopped.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(Errc::parse, what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A provider call failed at the transport level. `attempts` is how many
/// calls were made before giving up; `status` is the last HTTP status seen.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts = 1, std::optional<int> status = std::nullopt,
                 std::optional<int> retry_after_s = std::nullopt)
      : Error(Errc::transport, what), attempts_(attempts), status_(status), retry_after_s_(retry_after_s) {}

  int attempts() const noexcept { return attempts_; }
  std::optional<int> status() const noexcept { return status_; }
  std::optional<int> retry_after_seconds() const noexcept { return retry_after_s_; }

 private:
  int attempts_;
  std::optional<int> status_;
  std::optional<int> retry_after_s_;
};

}  // namespace nudgex
