#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace seqtag {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
// Throws Error{BadNumber}.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);
unsigned long long parse_uint(std::string_view text, std::string_view what);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
std::vector<std::string_view> lines(std::string_view text);

}  // namespace seqtag
