#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace advx::io {

/// Writes `content` to a sibling temp file and renames it over `path`, so
/// readers never observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Round-trippable hexadecimal float text ("%a").
std::string hex_double(double value);
/// Parses decimal or hex float text; throws DataError on trailing garbage.
double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace advx::io
