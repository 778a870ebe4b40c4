#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace debiaslab {

// 64-bit FNV-1a content digests used to bind pipeline stages to their exact
// inputs. Not cryptographic; provenance only.
std::uint64_t fnv1a64(std::string_view bytes);
std::string digest_hex(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

}  // namespace debiaslab
