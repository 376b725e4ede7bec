#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ila/errors.hpp"

namespace ila::harness {

/// Incremental SHA-256 over byte ranges, hex digest.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: digest initialisation failed", ExitCode::kData);
    }
  }

  Sha256& update(const void* p, std::size_t n) {
    if (n > 0 && EVP_DigestUpdate(ctx_.get(), p, n) != 1) {
      throw Error("sha256: update failed", ExitCode::kData);
    }
    return *this;
  }

  template <class U>
  Sha256& update(std::span<const U> v) {
    return update(v.data(), v.size_bytes());
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) {
      throw Error("sha256: finalisation failed", ExitCode::kData);
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kHex[md[i] >> 4];
      out += kHex[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  return Sha256().update(bytes).hex();
}

}  // namespace ila::harness
