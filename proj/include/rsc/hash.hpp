#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "rsc/error.hpp"

namespace rsc {

// Incremental SHA-256. Numeric inputs are fed as their little-endian object bytes,
// strings are length-prefixed so concatenation boundaries cannot collide.
class Hasher {
 public:
  Hasher() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    require(ctx_ && EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) == 1, ErrorKind::Io,
            "sha256 init failed");
  }

  Hasher& bytes(const void* data, std::size_t n) {
    EVP_DigestUpdate(ctx_.get(), data, n);
    return *this;
  }
  Hasher& str(std::string_view s) {
    u64(s.size());
    return bytes(s.data(), s.size());
  }
  Hasher& u64(std::uint64_t v) { return bytes(&v, sizeof v); }
  Hasher& i64(std::int64_t v) { return bytes(&v, sizeof v); }
  Hasher& f64(double v) {
    if (v == 0.0) v = 0.0;  // fold -0
    return bytes(&v, sizeof v);
  }
  template <typename T>
  Hasher& span(std::span<const T> values) {
    u64(values.size());
    return bytes(values.data(), values.size_bytes());
  }

  std::string hex(std::size_t chars = 16) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len && out.size() < chars; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out.substr(0, chars);
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace rsc
