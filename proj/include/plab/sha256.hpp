#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace plab {

/// Hex digest of a byte string (FIPS 180-4 SHA-256).
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace plab
