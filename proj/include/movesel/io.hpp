#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace movesel {

// Throws IoError.
std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames over the target.
void write_text_file(const std::filesystem::path& path, std::string_view content);

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);
// Parses the whole token as a double (leading '+' accepted); false on failure.
bool parse_double(std::string_view token, double& out) noexcept;

std::string_view trim(std::string_view s) noexcept;
std::vector<std::string_view> split(std::string_view s, char sep);
std::vector<std::string_view> split_whitespace(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace movesel
