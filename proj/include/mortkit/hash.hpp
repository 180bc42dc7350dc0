#pragma once

#include "mortkit/csv.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace mortkit {

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(csv::read_text(path)); }

} // namespace mortkit
