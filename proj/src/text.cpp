#include "seqtag/text.hpp"

#include <charconv>
#include <system_error>

#include "seqtag/error.hpp"

namespace seqtag {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

namespace {

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  T value{};
  const auto res = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw usage_error("BadNumber", "invalid value '" + std::string(text) + "' for " + std::string(what));
  return value;
}

}  // namespace

double parse_double(std::string_view text, std::string_view what) {
  return parse_number<double>(text, what);
}
long long parse_int(std::string_view text, std::string_view what) {
  return parse_number<long long>(text, what);
}
unsigned long long parse_uint(std::string_view text, std::string_view what) {
  return parse_number<unsigned long long>(text, what);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto end = s.find(sep, pos);
    if (end == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
}

std::vector<std::string_view> lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = end + 1;
  }
  return out;
}

}  // namespace seqtag
