#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ivf::csv {

// Minimal reader for the unquoted comma-separated files this library emits
// and consumes. Blank lines are skipped; a trailing '\r' is stripped.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  const std::vector<std::string>& header() const noexcept { return header_; }
  // Index of a header column; throws DataError when missing.
  std::size_t column(std::string_view name) const;
  void require_header(const std::vector<std::string>& expected) const;

  // Reads the next data row into `fields`. Returns false at end of file.
  bool next(std::vector<std::string>& fields);
  // 1-based data row number of the most recent row returned by next().
  std::size_t row() const noexcept { return row_; }

 private:
  std::filesystem::path path_;
  std::vector<std::string> lines_;
  std::size_t cursor_ = 0;
  std::size_t row_ = 0;
  std::vector<std::string> header_;
};

std::vector<std::string> split(std::string_view line);

// Field parsers; all throw DataError tagged with `row`.
long parse_int(std::string_view field, std::size_t row, std::string_view column);
double parse_double(std::string_view field, std::size_t row, std::string_view column);
bool parse_bool(std::string_view field, std::size_t row, std::string_view column);
std::optional<long> parse_optional_int(std::string_view field, std::size_t row, std::string_view column);

// Decimal formatting with 17 significant digits (lossless).
std::string format_double(double value);
// Shortest decimal string that round-trips to the same double.
std::string format_shortest(double value);

// Opens `path` for writing, creating parent directories. Throws Error on failure.
std::ofstream open_output(const std::filesystem::path& path);

}  // namespace ivf::csv
