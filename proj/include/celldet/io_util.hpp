#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace celldet {

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_text_file(const std::filesystem::path& path);

/// Splits on `sep` without trimming; empty fields are preserved.
std::vector<std::string> split(std::string_view line, char sep);

std::string_view trim(std::string_view s);

/// Parses a full-string double; throws ParseError naming `what` on failure.
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
std::uint64_t parse_uint64(std::string_view s, std::string_view what);

/// Shortest round-trippable decimal representation.
std::string format_double(double v);

/// Sorted list of regular files in `dir` with the given extension (e.g. ".pgm").
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, std::string_view ext);

}  // namespace celldet
