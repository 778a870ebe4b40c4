#include "debiaslab/digest.hpp"

#include <fstream>
#include <sstream>

#include "debiaslab/errors.hpp"

namespace debiaslab {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::string digest_hex(std::string_view bytes) {
    static const char* kHex = "0123456789abcdef";
    std::uint64_t hash = fnv1a64(bytes);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = kHex[hash & 0xf];
        hash >>= 4;
    }
    return out;
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingFileError("cannot read file for digest: " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return digest_hex(buffer.str());
}

}  // namespace debiaslab
