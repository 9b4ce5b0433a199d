#pragma once

#include <string>
#include <string_view>

namespace topa {

/// Hex-encoded SHA-256 of the input bytes.
std::string sha256_hex(std::string_view data);

/// Short fingerprint: first 16 hex chars of sha256.
std::string fingerprint16(std::string_view data);

}  // namespace topa
