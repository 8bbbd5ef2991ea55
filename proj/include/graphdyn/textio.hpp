#pragma once

#include <string>
#include <string_view>

namespace graphdyn {

/// Shortest text that parses back to the same double.
std::string format_double(double v);
/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(std::string_view s);

}  // namespace graphdyn
