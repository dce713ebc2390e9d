#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace conked {

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

}  // namespace conked
