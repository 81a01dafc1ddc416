// Content digests used for request keying, stage caching, and byte comparisons.
#pragma once

#include <string>
#include <string_view>

namespace gsinsert {

// Hex-encoded SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

// Reads a whole file into a string. Throws IoFailure when unreadable.
std::string read_file_bytes(const std::string& path);

// Writes bytes to a file, creating parent directories. Throws IoFailure.
void write_file_bytes(const std::string& path, std::string_view bytes);

}  // namespace gsinsert
