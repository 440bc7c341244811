#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace lorica {

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(const std::string& text);

}  // namespace lorica
