#include "hanguard/crypto.hpp"

#include <openssl/evp.h>

#include <memory>
#include <string>

namespace hanguard {

Digest32 sha256(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                               &EVP_MD_CTX_free);
    Digest32 out{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != out.size())
        throw std::runtime_error("sha256 failed");
    return out;
}

Digest32 credential_hash(std::string_view username, std::string_view password) {
    std::string joined;
    joined.reserve(username.size() + password.size() + 1);
    joined.append(username).append(":").append(password);
    return sha256(joined);
}

}  // namespace hanguard
