#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace searchrec::csv {

using Row = std::vector<std::string>;

/// Splits RFC-4180-ish text into rows (quoted fields, doubled quotes, CRLF).
std::vector<Row> parse(std::string_view text);

std::string read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a delimiter, quote or newline.
std::string escape(std::string_view field);

/// Shortest round-trip decimal representation.
std::string format_double(double value);

}  // namespace searchrec::csv
