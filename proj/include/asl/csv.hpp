#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace asl::csv {

/// Quotes a field when it holds a comma, quote or line break.
std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

/// Splits LF (or CRLF) separated records with RFC 4180 quoting.
/// Throws FormatError on an unterminated quote.
std::vector<std::vector<std::string>> parse(std::string_view text);

std::vector<std::vector<std::string>> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// "%.6g" formatting used by every numeric report column.
std::string number(double v);

}  // namespace asl::csv
