#include "ddimedit/hashing.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <stdexcept>

#include "ddimedit/errors.hpp"

namespace ddimedit {

namespace {
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::string to_hex(const unsigned char* digest, unsigned int len) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}
}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = kFnvOffset;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t h = kFnvOffset;
    for (auto c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::vector<float> hash_unit_vector(std::string_view text, std::uint64_t seed, std::size_t dim) {
    SplitMix64 rng(fnv1a64(text) ^ (seed * kGoldenGamma));
    std::vector<double> v(dim);
    double ss = 0.0;
    for (auto& x : v) {
        x = rng.symmetric();
        ss += x * x;
    }
    const double inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 init failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(std::span<const std::uint8_t> bytes) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
    return *this;
}

Sha256& Sha256::update(std::string_view text) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), text.data(), text.size());
    // field separator so ("ab","c") and ("a","bc") differ
    const unsigned char sep = 0x1f;
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), &sep, 1);
    return *this;
}

Sha256& Sha256::update_floats(std::span<const float> values) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), values.data(), values.size_bytes());
    return *this;
}

std::string Sha256::hex_digest() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len);
    return to_hex(digest, len);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    return to_hex(digest, len);
}

std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                    text.size()));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw InputFormatError("<base64>", "length not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw InputFormatError("<base64>", "invalid base64 payload");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the bytes produced by '=' padding
    if (!text.empty() && text.back() == '=') --len;
    if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
    out.resize(len);
    return out;
}

}  // namespace ddimedit
