#pragma once

// RFC 4180 CSV helpers and round-trip number formatting.

#include <string>
#include <string_view>
#include <vector>

namespace bae::csv {

/// Shortest decimal text that parses back to the same double; "nan",
/// "inf" and "-inf" for non-finite values.
[[nodiscard]] std::string format(double value);
[[nodiscard]] double parse_double(std::string_view text);
[[nodiscard]] long parse_long(std::string_view text);

/// Quotes a field when it contains a comma, quote or line break.
[[nodiscard]] std::string field(std::string_view text);
/// Joins fields into one record terminated by CRLF.
[[nodiscard]] std::string record(const std::vector<std::string>& fields);

/// Splits CSV text into records; accepts CRLF or LF line ends.
[[nodiscard]] std::vector<std::vector<std::string>> parse(std::string_view text);

}  // namespace bae::csv
