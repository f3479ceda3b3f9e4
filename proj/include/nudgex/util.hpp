#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nudgex {

namespace fs = std::filesystem;

using Timestamp = std::chrono::sys_seconds;
using Date = std::chrono::year_month_day;

/// Source of "now". Everything that stamps records takes one of these so
/// runs can be pinned to a fixed instant.
using Clock = std::function<Timestamp()>;

Clock system_clock();
Clock fixed_clock(Timestamp at);

// "YYYY-MM-DDTHH:MM:SSZ"; fractional seconds and "+00:00" accepted on input.
std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(std::string_view text);

// "YYYY-MM-DD"
std::string format_date(Date d);
Date parse_date(std::string_view text);
Date date_of(Timestamp t);

std::string read_file(const fs::path& path);

/// Replaces `path` via a temp file + rename. Leaves the file untouched when
/// the content is already identical.
void write_file_atomic(const fs::path& path, std::string_view content);

void append_line(const fs::path& path, std::string_view line);

/// Splits on '\n', dropping a trailing '\r' and blank lines.
std::vector<std::string> read_lines(const fs::path& path);

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Runs fn(i) for i in [0, count) on at most `max_parallel` threads. The
/// first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, std::size_t max_parallel, const std::function<void(std::size_t)>& fn);

/// SHA-256 over every regular file below `root` (relative path + content),
/// in sorted path order.
std::string tree_hash(const fs::path& root);

}  // namespace nudgex
