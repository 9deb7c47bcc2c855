#pragma once

#include <string_view>

#include "hanguard/net_types.hpp"

namespace hanguard {

Digest32 sha256(std::string_view data);

// SHA-256 over the ASCII string "username:password".
Digest32 credential_hash(std::string_view username, std::string_view password);

}  // namespace hanguard
