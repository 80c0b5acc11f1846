#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace turncal {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);
std::string replace_all(std::string_view s, std::string_view from, std::string_view to);
std::vector<std::string> split_lines(std::string_view s);

// 64-bit FNV-1a, used for deterministic cross-platform seeding (not security).
std::uint64_t fnv1a64(std::string_view s);

// Hex-encoded SHA-256 (OpenSSL EVP).
std::string sha256_hex(std::string_view data);

std::string read_text_file(const std::filesystem::path& path);
// Writes via a temp file in the same directory followed by rename, so readers
// never observe a partial file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

// Runs fn(0..count-1) across a fixed worker pool. The first exception thrown
// by any item is rethrown after all workers drain.
void parallel_for(size_t count, int workers, const std::function<void(size_t)>& fn);

}  // namespace turncal
