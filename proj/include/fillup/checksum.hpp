#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace fillup {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t file_checksum(const std::filesystem::path& path);

std::string to_hex(std::uint64_t value);
std::uint64_t from_hex(std::string_view hex);

}  // namespace fillup
