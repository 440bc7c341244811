#include "lorica/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>

#include "lorica/error.hpp"

namespace lorica {

std::string sha256_hex(std::span<const std::byte> bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1) {
        throw RuntimeError("sha256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", out[i]);
        hex += buf;
    }
    return hex;
}

std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::as_bytes(std::span(text.data(), text.size())));
}

}  // namespace lorica
