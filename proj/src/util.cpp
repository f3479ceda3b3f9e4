#include "nudgex/util.hpp"

#include "nudgex/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

namespace nudgex {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::io: return "io_error";
    case Errc::parse: return "parse_error";
    case Errc::format: return "format_error";
    case Errc::not_found: return "not_found";
    case Errc::conflict: return "conflict";
    case Errc::range: return "range_error";
    case Errc::unsupported_feature: return "unsupported_feature";
    case Errc::unsupported_latitude: return "unsupported_latitude";
    case Errc::empty_window: return "empty_window";
    case Errc::dimension: return "dimension_error";
    case Errc::missing_band: return "missing_band";
    case Errc::unknown_index: return "unknown_index";
    case Errc::argument: return "argument_error";
    case Errc::precondition: return "precondition_failed";
    case Errc::transport: return "transport_error";
    case Errc::empty_response: return "empty_response";
    case Errc::judge_format: return "judge_format_error";
    case Errc::grounding_unavailable: return "grounding_unavailable";
    case Errc::stage_order: return "stage_order_error";
    case Errc::busy: return "busy";
    case Errc::config: return "config_error";
  }
  return "error";
}

Clock system_clock() {
  return [] { return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now()); };
}

Clock fixed_clock(Timestamp at) {
  return [at] { return at; };
}

namespace {

int parse_int(std::string_view s, std::string_view what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(Errc::parse, fmt::format("invalid {} '{}'", what, s));
  }
  return value;
}

}  // namespace

std::string format_date(Date d) {
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                     static_cast<unsigned>(d.day()));
}

Date parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw Error(Errc::parse, fmt::format("invalid date '{}', expected YYYY-MM-DD", text));
  }
  Date d{std::chrono::year{parse_int(text.substr(0, 4), "year")},
         std::chrono::month{static_cast<unsigned>(parse_int(text.substr(5, 2), "month"))},
         std::chrono::day{static_cast<unsigned>(parse_int(text.substr(8, 2), "day"))}};
  if (!d.ok()) throw Error(Errc::parse, fmt::format("invalid calendar date '{}'", text));
  return d;
}

Date date_of(Timestamp t) {
  return Date{std::chrono::floor<std::chrono::days>(t)};
}

std::string format_timestamp(Timestamp t) {
  auto day = std::chrono::floor<std::chrono::days>(t);
  std::chrono::hh_mm_ss hms{t - day};
  return fmt::format("{}T{:02d}:{:02d}:{:02d}Z", format_date(Date{day}), hms.hours().count(), hms.minutes().count(),
                     hms.seconds().count());
}

Timestamp parse_timestamp(std::string_view text) {
  if (text.size() == 10) return std::chrono::sys_days{parse_date(text)};
  if (text.size() < 19 || (text[10] != 'T' && text[10] != ' ') || text[13] != ':' || text[16] != ':') {
    throw Error(Errc::parse, fmt::format("invalid timestamp '{}'", text));
  }
  Date d = parse_date(text.substr(0, 10));
  int hh = parse_int(text.substr(11, 2), "hour");
  int mm = parse_int(text.substr(14, 2), "minute");
  int ss = parse_int(text.substr(17, 2), "second");
  if (hh > 23 || mm > 59 || ss > 60) throw Error(Errc::parse, fmt::format("invalid time in '{}'", text));
  std::string_view rest = text.substr(19);
  if (!rest.empty() && rest.front() == '.') {
    std::size_t i = 1;
    while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
    rest.remove_prefix(i);
  }
  if (!(rest.empty() || rest == "Z" || rest == "+00:00")) {
    throw Error(Errc::parse, fmt::format("timestamp '{}' must be UTC", text));
  }
  return std::chrono::sys_days{d} + std::chrono::hours{hh} + std::chrono::minutes{mm} + std::chrono::seconds{ss};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(Errc::io, fmt::format("read failed for '{}'", path.string()));
  return std::move(ss).str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (fs::exists(path, ec) && fs::file_size(path, ec) == content.size()) {
    if (read_file(path) == content) return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += fmt::format(".tmp{}", std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, fmt::format("cannot write '{}'", tmp.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(Errc::io, fmt::format("write failed for '{}'", tmp.string()));
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io, fmt::format("rename to '{}' failed: {}", path.string(), ec.message()));
}

void append_line(const fs::path& path, std::string_view line) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::io, fmt::format("cannot append to '{}'", path.string()));
  out << line << '\n';
  out.flush();
  if (!out) throw Error(Errc::io, fmt::format("append failed for '{}'", path.string()));
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::string content = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    std::string_view line(content.data() + start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::io, "SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::parse, "base64 length is not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error(Errc::parse, "invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  auto b = std::find_if(s.begin(), s.end(), not_space);
  auto e = std::find_if(s.rbegin(), s.rend(), not_space).base();
  return b < e ? std::string(b, e) : std::string();
}

void parallel_for(std::size_t count, std::size_t max_parallel, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  std::size_t workers = std::clamp<std::size_t>(max_parallel, 1, count);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

std::string tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string manifest;
  for (const auto& rel : files) {
    manifest += rel.generic_string();
    manifest += '\0';
    manifest += sha256_hex(read_file(root / rel));
    manifest += '\n';
  }
  return sha256_hex(manifest);
}

}  // namespace nudgex
