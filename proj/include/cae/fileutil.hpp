#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cae {

std::vector<unsigned char> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written output.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// Parses "key=value" lines; blank lines and lines starting with '#' are
/// skipped, whitespace around keys and values is trimmed.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

/// Expands a shell-style pattern into sorted matching paths.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

}  // namespace cae
