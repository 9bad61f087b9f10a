#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace synergrasp {

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
/// Creates missing parent directories. On failure no file is left behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace synergrasp
