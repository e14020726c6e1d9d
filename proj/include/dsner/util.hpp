// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dsner {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);  // throws ParameterError
long long parse_int(std::string_view text);  // throws ParameterError
bool parse_bool(std::string_view text);      // true/false/1/0/yes/no

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string_view trim(std::string_view s);

}  // namespace dsner
