#include "ivf/csv.hpp"

#include "ivf/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ivf::csv {

namespace {

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

bool blank(std::string_view s) {
  for (char c : s) {
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

std::string describe(std::string_view column, std::string_view field) {
  return "invalid value '" + std::string(field) + "' in column " + std::string(column);
}

}  // namespace

Reader::Reader(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) lines_.push_back(std::move(line));
  while (cursor_ < lines_.size() && blank(lines_[cursor_])) ++cursor_;
  if (cursor_ == lines_.size()) throw DataError(path.string() + ": missing header");
  header_ = split(trim_cr(lines_[cursor_++]));
  if (!header_.empty() && header_[0].rfind("\xEF\xBB\xBF", 0) == 0) header_[0].erase(0, 3);
}

std::size_t Reader::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw DataError(path_.string() + ": missing column " + std::string(name));
}

void Reader::require_header(const std::vector<std::string>& expected) const {
  if (header_ != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw DataError(path_.string() + ": expected header " + want);
  }
}

bool Reader::next(std::vector<std::string>& fields) {
  while (cursor_ < lines_.size()) {
    std::string_view line = trim_cr(lines_[cursor_++]);
    if (blank(line)) continue;
    ++row_;
    fields = split(line);
    if (fields.size() != header_.size()) {
      throw DataError(path_.string() + ": expected " + std::to_string(header_.size()) + " fields, got " +
                          std::to_string(fields.size()),
                      row_);
    }
    return true;
  }
  return false;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

long parse_int(std::string_view field, std::size_t row, std::string_view column) {
  long value = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end) throw DataError(describe(column, field), row);
  return value;
}

double parse_double(std::string_view field, std::size_t row, std::string_view column) {
  double value = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw DataError(describe(column, field), row);
  }
  return value;
}

bool parse_bool(std::string_view field, std::size_t row, std::string_view column) {
  if (field == "0") return false;
  if (field == "1") return true;
  throw DataError(describe(column, field), row);
}

std::optional<long> parse_optional_int(std::string_view field, std::size_t row, std::string_view column) {
  if (field.empty()) return std::nullopt;
  return parse_int(field, row, column);
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string format_shortest(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace ivf::csv
