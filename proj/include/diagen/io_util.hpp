#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace diagen {

// Shortest round-trip decimal form of a double. All persisted floating-point
// values go through this so that reruns produce byte-identical files.
std::string format_double(double value);

// Full-string parse; rejects trailing garbage, inf and nan.
std::optional<double> parse_double(std::string_view text);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over the target.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

std::string base64_encode(const std::uint8_t* data, std::size_t size);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep);
std::string trim(std::string_view text);
std::string to_lower(std::string_view text);

}  // namespace diagen
